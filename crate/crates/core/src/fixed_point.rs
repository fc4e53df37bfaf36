//! The best-response map `Φ: μ ↦ L(X^μ_T)` and its fixed points.
//!
//! [`solve_equilibrium`] runs damped Picard iteration
//! `μ_{k+1} = (1 - λ) μ_k + λ Φ(μ_k)` in the 1-Wasserstein metric. With
//! [`SeedPolicy::Fixed`] every evaluation of `Φ` reuses the same Brownian
//! paths, so `Φ` is a deterministic map of measures and iterate steps can be
//! driven below the Monte Carlo noise floor. Convergence is then certified
//! by a fresh-seed residual `W₁(Φ(μ*), μ*)` with a bootstrap error bar.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure::{CdfConvention, EmpiricalMeasure};
use crate::model::{monotonicity_pairing, ModelParams, RewardSpec};
use crate::rng::Seed;
use crate::sde::{make_time_grid, simulate_optimal_terminal, TimeGrid};
use crate::value::lemma_bounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Common random numbers across iterations.
    Fixed,
    /// A new seed per iteration.
    Fresh,
}

/// Starting measure of the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialMeasure {
    Dirac { at: f64 },
    /// `atoms` samples of `N(mean, std_dev²)`.
    Normal { mean: f64, std_dev: f64, atoms: usize },
}

impl Default for InitialMeasure {
    fn default() -> Self {
        Self::Dirac { at: 0.0 }
    }
}

impl InitialMeasure {
    pub fn sample(&self, seed: Seed) -> Result<EmpiricalMeasure> {
        match *self {
            Self::Dirac { at } => Ok(EmpiricalMeasure::dirac(at)),
            Self::Normal {
                mean,
                std_dev,
                atoms,
            } => {
                if atoms == 0 || !(std_dev >= 0.0) {
                    return Err(invalid("initial", "needs atoms >= 1 and std_dev >= 0"));
                }
                let mut st = seed.stream(0);
                EmpiricalMeasure::from_samples((0..atoms).map(|_| mean + std_dev * st.normal()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    /// Monte Carlo paths per evaluation of `Φ`.
    pub paths: usize,
    pub max_iters: usize,
    pub tol_w1: f64,
    /// Mixture weight `λ` on the new iterate.
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Switch to `λ = 0.5` after three non-decreasing steps at `λ = 1`.
    #[serde(default = "default_true")]
    pub auto_damping: bool,
    #[serde(default = "default_policy")]
    pub seed_policy: SeedPolicy,
    #[serde(default = "default_base_steps")]
    pub base_steps: usize,
    #[serde(default = "default_cluster")]
    pub cluster: u32,
    #[serde(default)]
    pub initial: InitialMeasure,
    /// Bootstrap resamples for the residual error bar.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn default_damping() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_policy() -> SeedPolicy {
    SeedPolicy::Fixed
}
fn default_base_steps() -> usize {
    500
}
fn default_cluster() -> u32 {
    4
}
fn default_bootstrap() -> usize {
    20
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            paths: 200_000,
            max_iters: 50,
            tol_w1: 5e-3,
            damping: default_damping(),
            auto_damping: true,
            seed_policy: SeedPolicy::Fixed,
            base_steps: default_base_steps(),
            cluster: default_cluster(),
            initial: InitialMeasure::default(),
            bootstrap: default_bootstrap(),
        }
    }
}

impl FixedPointConfig {
    /// `(field, reason)` for every violated constraint.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        if self.paths < 1000 {
            v.push(("paths", format!("{} is below 1000", self.paths)));
        }
        if self.max_iters == 0 {
            v.push(("max_iters", "must be at least 1".to_string()));
        }
        if !(self.tol_w1 > 0.0) {
            v.push(("tol_w1", format!("{} is not positive", self.tol_w1)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            v.push(("damping", format!("{} is outside (0, 1]", self.damping)));
        }
        if self.base_steps < 2 {
            v.push(("base_steps", "needs at least 2 steps".to_string()));
        }
        if let InitialMeasure::Normal { std_dev, atoms, .. } = self.initial {
            if atoms == 0 || !(std_dev >= 0.0) {
                v.push(("initial", "needs atoms >= 1 and std_dev >= 0".to_string()));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((field, reason)) => Err(invalid(field, reason)),
        }
    }

    pub fn grid(&self, horizon: f64) -> Result<TimeGrid> {
        make_time_grid(horizon, self.base_steps, self.cluster)
    }
}

/// The a-priori second-moment bound `C₀` on terminal laws of optimal paths.
pub fn second_moment_bound(params: &ModelParams, reward: &RewardSpec) -> Result<f64> {
    let a = lemma_bounds(params, reward, 0.0)?.effort_cap;
    let t = params.horizon_t;
    let s = params.sigma;
    Ok(a * a + 2.0 * a * s * (2.0 * t / std::f64::consts::PI).sqrt() + s * s * t)
}

fn require_mfg0(params: &ModelParams) -> Result<()> {
    if params.sigma0 != 0.0 {
        return Err(invalid(
            "model.sigma0",
            "the fixed point is solved without common noise; lift it with common_noise",
        ));
    }
    Ok(())
}

/// `Φ(μ)`: the empirical terminal law of `config.paths` optimal paths.
pub fn phi_map(
    mu: &EmpiricalMeasure,
    params: &ModelParams,
    reward: &RewardSpec,
    config: &FixedPointConfig,
    seed: Seed,
) -> Result<EmpiricalMeasure> {
    require_mfg0(params)?;
    let grid = config.grid(params.horizon_t)?;
    simulate_optimal_terminal(mu, params, reward, &grid, config.paths, seed)?.terminal_measure()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iteration: usize,
    /// `W₁(μ_k, μ_{k-1})`.
    pub w1_step: f64,
    pub second_moment: f64,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub mu_star: EmpiricalMeasure,
    pub history: Vec<IterateRecord>,
    pub converged: bool,
    /// `W₁(Φ(μ*), μ*)` with `Φ` evaluated on fresh paths.
    pub residual: f64,
    /// Bootstrap estimate of the empirical `W₁` fluctuation at `paths`.
    pub residual_mc_error: f64,
    pub c0: f64,
    /// Iterations whose second moment exceeded `1.05 C₀`.
    pub moment_violations: Vec<usize>,
}

impl EquilibriumResult {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// Writes `iteration,w1_step,second_moment,damping`.
    pub fn write_history<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,w1_step,second_moment,damping")?;
        for r in &self.history {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{}",
                r.iteration, r.w1_step, r.second_moment, r.damping
            )?;
        }
        Ok(())
    }
}

/// Mean `W₁` between `samples` and bootstrap resamples of itself.
pub fn bootstrap_w1_error(samples: &[f64], reps: usize, seed: Seed) -> Result<f64> {
    if samples.is_empty() || reps == 0 {
        return Err(Error::InsufficientData("bootstrap needs samples and reps".into()));
    }
    let base = EmpiricalMeasure::from_samples(samples.to_vec())?;
    let mut total = 0.0;
    for r in 0..reps {
        let mut st = seed.stream(r as u64);
        let draw: Vec<f64> = (0..samples.len())
            .map(|_| samples[st.index_below(samples.len())])
            .collect();
        total += EmpiricalMeasure::from_samples(draw)?.w1_distance(&base);
    }
    Ok(total / reps as f64)
}

/// Damped Picard iteration from `config.initial`.
///
/// Non-convergence within `max_iters` is reported through
/// [`EquilibriumResult::converged`], not as an error.
pub fn solve_equilibrium(
    params: &ModelParams,
    reward: &RewardSpec,
    config: &FixedPointConfig,
    seed: Seed,
) -> Result<EquilibriumResult> {
    require_mfg0(params)?;
    config.validate()?;
    let c0 = second_moment_bound(params, reward)?;
    let phi_seed = seed.derive("phi");
    let mut mu = config.initial.sample(seed.derive("initial"))?;
    let mut lambda = config.damping;
    let mut history: Vec<IterateRecord> = Vec::new();
    let mut moment_violations = Vec::new();
    let mut converged = false;
    let mut stalled = 0;
    for k in 1..=config.max_iters {
        let s = match config.seed_policy {
            SeedPolicy::Fixed => phi_seed,
            SeedPolicy::Fresh => phi_seed.derive_index(k as u64),
        };
        let image = phi_map(&mu, params, reward, config, s)?;
        let next = mu.mixture(&image, lambda)?;
        let step = next.w1_distance(&mu);
        let m2 = next.second_moment();
        if m2 > 1.05 * c0 {
            moment_violations.push(k);
        }
        if let Some(prev) = history.last() {
            stalled = if step >= prev.w1_step { stalled + 1 } else { 0 };
        }
        history.push(IterateRecord {
            iteration: k,
            w1_step: step,
            second_moment: m2,
            damping: lambda,
        });
        mu = next;
        if step <= config.tol_w1 {
            converged = true;
            break;
        }
        if config.auto_damping && lambda == 1.0 && stalled >= 3 {
            lambda = 0.5;
            stalled = 0;
        }
    }
    let fresh = phi_map(&mu, params, reward, config, seed.derive("residual"))?;
    let residual = fresh.w1_distance(&mu);
    let fresh_samples = simulate_samples_of(&fresh);
    let residual_mc_error = bootstrap_w1_error(&fresh_samples, config.bootstrap, seed.derive("bootstrap"))?;
    Ok(EquilibriumResult {
        mu_star: mu,
        history,
        converged,
        residual,
        residual_mc_error,
        c0,
        moment_violations,
    })
}

/// Expands an equally weighted empirical law back into its samples.
fn simulate_samples_of(mu: &EmpiricalMeasure) -> Vec<f64> {
    let n = mu.weights().iter().map(|w| 1.0 / w).fold(0.0, f64::max).round().max(1.0);
    let mut out = Vec::with_capacity(n as usize);
    for (x, w) in mu.atoms() {
        let count = (w * n).round().max(1.0) as usize;
        out.extend(std::iter::repeat_n(x, count));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessReport {
    /// `∫ (R_a - R_b) d(a - b)`.
    pub pairing: f64,
    /// `pairing <= 1e-10`.
    pub monotone: bool,
    pub convention: CdfConvention,
    pub w1: f64,
}

pub fn uniqueness_certificate(
    reward: &RewardSpec,
    mu_a: &EmpiricalMeasure,
    mu_b: &EmpiricalMeasure,
    convention: CdfConvention,
) -> UniquenessReport {
    let pairing = monotonicity_pairing(reward, mu_a, mu_b, convention);
    UniquenessReport {
        pairing,
        monotone: pairing <= 1e-10,
        convention,
        w1: mu_a.w1_distance(mu_b),
    }
}
