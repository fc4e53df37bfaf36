//! Finite-player games under the mean-field strategies.
//!
//! Each of `N` players runs the decentralised feedback
//! `ā(t, x) = a*(t, x; μ*)` computed against the equilibrium law `μ*`, and
//! is paid `R(X_i, F̂_N(X_i)) - ∫ c ā² dt` where `F̂_N` is the empirical
//! CDF of all `N` terminal states, the player included. Since players only
//! interact through terminal ranks, all `reps · N` paths are simulated as
//! one batch and grouped into games afterwards. Path `i · reps + r` is
//! player `i` of replication `r`, so the `reps` paths of player 0 form a
//! prefix of the batch and can be re-simulated alone under a deviation
//! with exactly the same Brownian increments.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::drift::DriftTable;
use crate::error::{invalid, Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{ModelParams, RewardSpec};
use crate::rng::Seed;
use crate::sde::{optimal_strategy, PathOutcome, Stepper, StrategySpec, TimeGrid};
use crate::value::ValueField;

/// `(mean, standard error)` of independent samples.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `min(1, 2 exp(-2 N ε²))`.
pub fn dkw_bound(n: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    Ok((2.0 * (-2.0 * n as f64 * eps * eps).exp()).min(1.0))
}

/// `2L / (4N)^{α/2} · ∫_0^∞ exp(-y^{2/α}/2) dy`, an upper bound on
/// `L E‖F̂_N - F‖^α_∞` and hence on `|J_N - V|`.
pub fn theory_bound(n: usize, l: f64, alpha: f64) -> f64 {
    // ∫_0^∞ exp(-y^{2/α}/2) dy = (α/2) 2^{α/2} Γ(α/2)
    let integral = 0.5 * alpha * 2f64.powf(0.5 * alpha) * libm::tgamma(0.5 * alpha);
    2.0 * l / (4.0 * n as f64).powf(0.5 * alpha) * integral
}

/// `‖F̂_N - F‖_∞` for `N` uniform samples against the uniform CDF.
pub fn sup_deviation(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i + 1) as f64 / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DkwCheck {
    pub n: usize,
    pub eps: f64,
    pub draws: usize,
    pub exceed_fraction: f64,
    pub bound: f64,
    /// `bound + z_{0.99} · sqrt(bound (1 - bound) / draws)`.
    pub upper_limit: f64,
    pub pass: bool,
}

/// Fraction of `draws` sup-deviations at sample size `n` that exceed `eps`.
pub fn dkw_check(n: usize, eps: f64, draws: usize, seed: Seed) -> Result<DkwCheck> {
    if n == 0 || draws == 0 {
        return Err(invalid("draws", "needs n >= 1 and draws >= 1"));
    }
    let bound = dkw_bound(n, eps)?;
    let mut buf = vec![0.0; n];
    let mut exceed = 0usize;
    for d in 0..draws {
        let mut st = seed.stream(d as u64);
        buf.iter_mut().for_each(|u| *u = st.uniform());
        if sup_deviation(&mut buf) > eps {
            exceed += 1;
        }
    }
    let fraction = exceed as f64 / draws as f64;
    let upper_limit = bound + 2.326_347_874_040_841 * (bound * (1.0 - bound) / draws as f64).sqrt();
    Ok(DkwCheck {
        n,
        eps,
        draws,
        exceed_fraction: fraction,
        bound,
        upper_limit,
        pass: fraction <= upper_limit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub used: usize,
    /// `N` values dropped because their gap was not positive.
    pub excluded: Vec<f64>,
}

/// Least-squares fit of `log gap = intercept + slope · log N`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    let mut excluded = Vec::new();
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(n, g)| {
            let ok = g > 0.0 && n > 0.0 && g.is_finite();
            if !ok {
                excluded.push(n);
            }
            ok
        })
        .map(|&(n, g)| (n.ln(), g.ln()))
        .collect();
    let mut distinct: Vec<f64> = kept.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs 3 distinct N with positive gaps, got {}",
            distinct.len()
        )));
    }
    let m = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / m;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        used: kept.len(),
        excluded,
    })
}

/// A unilateral deviation tried against the equilibrium profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Deviation {
    /// The equilibrium feedback itself.
    Equilibrium,
    Constant { value: f64 },
    /// `factor · ā(t, x)`.
    Scaled { factor: f64 },
    /// `ā(factor · t, x)`.
    TimeShifted { factor: f64 },
}

impl Deviation {
    pub fn id(&self) -> String {
        match self {
            Self::Equilibrium => "equilibrium".into(),
            Self::Constant { value } => format!("constant({value})"),
            Self::Scaled { factor } => format!("scaled({factor})"),
            Self::TimeShifted { factor } => format!("time_shifted({factor})"),
        }
    }

    /// Zero effort, constants ±0.5 and ±1, scaled feedback and a
    /// time-shifted feedback.
    pub fn default_family() -> Vec<Deviation> {
        let mut v = vec![Self::Constant { value: 0.0 }];
        for value in [-1.0, -0.5, 0.5, 1.0] {
            v.push(Self::Constant { value });
        }
        for factor in [0.5, 0.8, 1.2, 1.5] {
            v.push(Self::Scaled { factor });
        }
        v.push(Self::TimeShifted { factor: 0.8 });
        v
    }
}

/// Everything needed to play finite games against a fixed `μ*`.
pub struct NashSetup {
    params: ModelParams,
    reward: RewardSpec,
    mu_star: EmpiricalMeasure,
    field: Arc<ValueField>,
    grid: TimeGrid,
    equilibrium: StrategySpec,
    stepper: Stepper,
}

/// Terminal outcomes of `reps` replications of an `N`-player game.
pub(crate) struct GameBatch {
    pub n: usize,
    pub reps: usize,
    /// Player-major: `outcomes[i * reps + r]`.
    pub outcomes: Vec<PathOutcome>,
}

impl GameBatch {
    pub(crate) fn player(&self, i: usize, r: usize) -> &PathOutcome {
        &self.outcomes[i * self.reps + r]
    }
}

impl NashSetup {
    /// `params.sigma0` is ignored: strategies act on the idiosyncratic state.
    pub fn new(
        mu_star: EmpiricalMeasure,
        params: &ModelParams,
        reward: &RewardSpec,
        grid: TimeGrid,
    ) -> Result<Self> {
        let params = params.without_common_noise();
        let field = Arc::new(ValueField::new(params, reward.clone(), mu_star.clone())?);
        let equilibrium = optimal_strategy(&field, &grid)?;
        let stepper = Stepper::new(&grid, params.sigma, params.cost_c);
        Ok(Self {
            params,
            reward: reward.clone(),
            mu_star,
            field,
            grid,
            equilibrium,
            stepper,
        })
    }

    pub fn field(&self) -> &Arc<ValueField> {
        &self.field
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn reward(&self) -> &RewardSpec {
        &self.reward
    }

    pub fn mu_star(&self) -> &EmpiricalMeasure {
        &self.mu_star
    }

    pub fn equilibrium_strategy(&self) -> &StrategySpec {
        &self.equilibrium
    }

    pub fn strategy_for(&self, deviation: &Deviation) -> Result<StrategySpec> {
        Ok(match *deviation {
            Deviation::Equilibrium => self.equilibrium.clone(),
            Deviation::Constant { value } => StrategySpec::Constant(value),
            Deviation::Scaled { factor } => match &self.equilibrium {
                StrategySpec::Tabulated { table, .. } => StrategySpec::Tabulated {
                    table: Arc::clone(table),
                    scale: factor,
                },
                _ => unreachable!("equilibrium strategy is tabulated"),
            },
            Deviation::TimeShifted { factor } => {
                if !(factor > 0.0 && factor <= 1.0) {
                    return Err(invalid("deviation.factor", "time shift factor must lie in (0, 1]"));
                }
                let times: Vec<f64> = self.grid.drift_times().iter().map(|t| factor * t).collect();
                StrategySpec::Tabulated {
                    table: Arc::new(DriftTable::build(&self.field, &times)?),
                    scale: 1.0,
                }
            }
        })
    }

    pub(crate) fn simulate(&self, strategy: &StrategySpec, seed: Seed, paths: usize) -> Result<Vec<PathOutcome>> {
        strategy.validate(&self.grid)?;
        Ok(self.stepper.run(strategy, seed, paths))
    }

    pub(crate) fn play(&self, n: usize, reps: usize, seed: Seed) -> Result<GameBatch> {
        if n == 0 || reps == 0 {
            return Err(invalid("n", "games need at least one player and one replication"));
        }
        Ok(GameBatch {
            n,
            reps,
            outcomes: self.simulate(&self.equilibrium, seed, n * reps)?,
        })
    }

    pub(crate) fn family_strategies(&self, family: &[Deviation]) -> Result<Vec<(String, StrategySpec)>> {
        family.iter().map(|d| Ok((d.id(), self.strategy_for(d)?))).collect()
    }

    /// `R(x, F_{μ*}(x))`.
    pub fn mfg_reward(&self, x: f64) -> f64 {
        self.reward.eval_unchecked(x, self.mu_star.cdf(x))
    }
}

/// Rank payoffs `R(x_i, #{j : x_j <= x_i} / N)` of one game.
pub(crate) fn rank_payoffs(reward: &RewardSpec, states: &[f64], out: &mut Vec<f64>) {
    let mut sorted = states.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = states.len() as f64;
    out.clear();
    out.extend(states.iter().map(|&x| {
        let below = sorted.partition_point(|&y| y <= x);
        reward.eval_unchecked(x, below as f64 / n)
    }));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MfgValue {
    /// Monte Carlo `E[R_{μ*}(X_T) - ∫ c a*² dt]`.
    pub value: f64,
    pub stderr: f64,
    /// `v(0, 0; μ*)` from the closed form.
    pub closed_form: f64,
    /// Closed form and Monte Carlo differ by more than three standard errors.
    pub flagged: bool,
}

/// The mean-field value, estimated by simulation and cross-checked with the
/// closed form. Disagreement beyond five standard errors is an error.
pub fn mfg_value(setup: &NashSetup, paths: usize, seed: Seed) -> Result<MfgValue> {
    if paths < 2 {
        return Err(invalid("paths", "needs at least 2 paths"));
    }
    let out = setup.simulate(&setup.equilibrium, seed, paths)?;
    let payoffs: Vec<f64> = out.iter().map(|o| setup.mfg_reward(o.x) - o.effort).collect();
    let (value, stderr) = mean_and_stderr(&payoffs);
    let closed_form = setup.field.value(0.0, 0.0)?;
    let diff = (value - closed_form).abs();
    if diff > 5.0 * stderr && diff > 1e-12 {
        return Err(Error::Consistency(format!(
            "simulated value {value} and closed form {closed_form} differ by {diff:e} (stderr {stderr:e})"
        )));
    }
    Ok(MfgValue {
        value,
        stderr,
        closed_form,
        flagged: diff > 3.0 * stderr && diff > 1e-12,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PayoffEstimate {
    pub n: usize,
    pub reps: usize,
    /// Mean of `J^N_i` over players and replications.
    pub j_n: f64,
    pub stderr: f64,
    /// `J_N - V` with `V` estimated on the same paths, so effort cancels.
    pub gap_vs_value: f64,
    pub gap_stderr: f64,
}

pub fn nplayer_payoffs(setup: &NashSetup, n: usize, reps: usize, seed: Seed) -> Result<PayoffEstimate> {
    let batch = setup.play(n, reps, seed)?;
    Ok(summarize_games(setup, &batch, None))
}

/// Per-replication averages of `J^N_i` and of `J^N_i - (R_{μ*}(X_i) - effort_i)`.
///
/// `shift[r]`, when given, is added to every state of replication `r` before
/// ranking (the common-noise displacement).
pub(crate) fn summarize_games(setup: &NashSetup, batch: &GameBatch, shift: Option<&[f64]>) -> PayoffEstimate {
    let (n, reps) = (batch.n, batch.reps);
    let mut rep_j = Vec::with_capacity(reps);
    let mut rep_gap = Vec::with_capacity(reps);
    let mut states = Vec::with_capacity(n);
    let mut payoffs = Vec::with_capacity(n);
    for r in 0..reps {
        let w = shift.map_or(0.0, |s| s[r]);
        states.clear();
        states.extend((0..n).map(|i| batch.player(i, r).x + w));
        rank_payoffs(&setup.reward, &states, &mut payoffs);
        let mut j = 0.0;
        let mut gap = 0.0;
        for (i, pay) in payoffs.iter().enumerate() {
            let o = batch.player(i, r);
            j += pay - o.effort;
            gap += pay - setup.mfg_reward(o.x);
        }
        rep_j.push(j / n as f64);
        rep_gap.push(gap / n as f64);
    }
    let (j_n, stderr) = mean_and_stderr(&rep_j);
    let (gap_vs_value, gap_stderr) = mean_and_stderr(&rep_gap);
    PayoffEstimate {
        n,
        reps,
        j_n,
        stderr,
        gap_vs_value,
        gap_stderr,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationGap {
    pub gap: f64,
    pub stderr: f64,
    pub argmax: String,
    /// `(id, gap, stderr)` for every deviation tried.
    pub all: Vec<(String, f64, f64)>,
}

/// Largest estimated gain `J^{N,β}_0 - J^N_0` of player 0 over `family`.
///
/// The deviating player reuses its equilibrium Brownian increments and the
/// other `N - 1` players are unchanged.
pub fn deviation_gap(
    setup: &NashSetup,
    n: usize,
    family: &[Deviation],
    reps: usize,
    seed: Seed,
) -> Result<DeviationGap> {
    let batch = setup.play(n, reps, seed)?;
    let strategies = setup.family_strategies(family)?;
    deviation_gap_on(setup, &batch, &strategies, seed, None)
}

pub(crate) fn deviation_gap_on(
    setup: &NashSetup,
    batch: &GameBatch,
    family: &[(String, StrategySpec)],
    seed: Seed,
    shift: Option<&[f64]>,
) -> Result<DeviationGap> {
    if family.is_empty() {
        return Err(invalid("family", "needs at least one deviation"));
    }
    let (n, reps) = (batch.n, batch.reps);
    let mut all = Vec::with_capacity(family.len());
    let mut states = Vec::with_capacity(n);
    let mut payoffs = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(reps);
    for r in 0..reps {
        let w = shift.map_or(0.0, |s| s[r]);
        states.clear();
        states.extend((0..n).map(|i| batch.player(i, r).x + w));
        rank_payoffs(&setup.reward, &states, &mut payoffs);
        base.push(payoffs[0] - batch.player(0, r).effort);
    }
    for (id, strategy) in family {
        let deviator = setup.simulate(strategy, seed, reps)?;
        let mut gains = Vec::with_capacity(reps);
        for r in 0..reps {
            let w = shift.map_or(0.0, |s| s[r]);
            states.clear();
            states.push(deviator[r].x + w);
            states.extend((1..n).map(|i| batch.player(i, r).x + w));
            rank_payoffs(&setup.reward, &states, &mut payoffs);
            gains.push(payoffs[0] - deviator[r].effort - base[r]);
        }
        let (g, se) = mean_and_stderr(&gains);
        all.push((id.clone(), g, se));
    }
    let best = all
        .iter()
        .cloned()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("family is not empty");
    Ok(DeviationGap {
        gap: best.1,
        stderr: best.2,
        argmax: best.0,
        all,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NashConfig {
    pub n_values: Vec<usize>,
    /// Target `reps · N` per rung when `reps` is not fixed.
    #[serde(default = "default_player_paths")]
    pub player_paths: usize,
    #[serde(default)]
    pub reps: Option<usize>,
    #[serde(default = "default_min_reps")]
    pub min_reps: usize,
    #[serde(default = "default_max_reps")]
    pub max_reps: usize,
    /// Paths for the Monte Carlo mean-field value.
    #[serde(default = "default_value_paths")]
    pub value_paths: usize,
    /// Deviations tried at every rung; empty skips the deviation check.
    #[serde(default = "Deviation::default_family")]
    pub family: Vec<Deviation>,
}

fn default_player_paths() -> usize {
    1 << 17
}
fn default_min_reps() -> usize {
    32
}
fn default_max_reps() -> usize {
    1 << 20
}
fn default_value_paths() -> usize {
    200_000
}

impl Default for NashConfig {
    fn default() -> Self {
        Self {
            n_values: vec![16, 32, 64, 128, 256, 512, 1024],
            player_paths: default_player_paths(),
            reps: None,
            min_reps: default_min_reps(),
            max_reps: default_max_reps(),
            value_paths: default_value_paths(),
            family: Deviation::default_family(),
        }
    }
}

impl NashConfig {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        if self.n_values.is_empty() || self.n_values.iter().any(|&n| n < 2) {
            v.push(("n_values", "needs at least one N, each >= 2".to_string()));
        }
        if self.min_reps < 2 || self.min_reps > self.max_reps {
            v.push(("min_reps", "needs 2 <= min_reps <= max_reps".to_string()));
        }
        if matches!(self.reps, Some(r) if r < 2) {
            v.push(("reps", "needs at least 2 replications".to_string()));
        }
        if self.value_paths < 2 {
            v.push(("value_paths", "needs at least 2 paths".to_string()));
        }
        v
    }

    fn initial_reps(&self, n: usize) -> usize {
        self.reps
            .unwrap_or_else(|| (self.player_paths / n).clamp(self.min_reps, self.max_reps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashRow {
    pub n: usize,
    pub reps: usize,
    pub j_n: f64,
    pub stderr: f64,
    /// `|J_N - V|`.
    pub gap: f64,
    pub gap_stderr: f64,
    pub theory_bound: f64,
    pub deviation: Option<DeviationGap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashReport {
    pub rows: Vec<NashRow>,
    pub value: MfgValue,
    pub holder_l: f64,
    pub holder_alpha: f64,
    pub fit: Option<RateFit>,
    pub seed: Seed,
}

impl NashReport {
    pub fn n_values(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.n).collect()
    }

    pub const CSV_HEADER: &'static str =
        "N,J_N,stderr,gap,gap_stderr,theory_bound,deviation_gap,deviation_stderr,deviation_argmax,reps";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            let (dg, ds, da) = match &r.deviation {
                Some(d) => (format!("{:.16e}", d.gap), format!("{:.16e}", d.stderr), d.argmax.clone()),
                None => (String::new(), String::new(), String::new()),
            };
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{}",
                r.n, r.j_n, r.stderr, r.gap, r.gap_stderr, r.theory_bound, dg, ds, da, r.reps
            )?;
        }
        Ok(())
    }
}

/// Payoffs, `|J_N - V|` and deviation gaps along an `N` ladder, with a
/// log-log rate fit of `|J_N - V|`.
///
/// Unless `config.reps` is fixed, replications at each rung are raised until
/// the payoff standard error is at most a fifth of the theoretical bound.
pub fn verify_nash(setup: &NashSetup, config: &NashConfig, seed: Seed) -> Result<NashReport> {
    verify_nash_with_shift(setup, config, seed, |_, _| None)
}

pub(crate) fn verify_nash_with_shift(
    setup: &NashSetup,
    config: &NashConfig,
    seed: Seed,
    shift: impl Fn(usize, usize) -> Option<Vec<f64>>,
) -> Result<NashReport> {
    if let Some((field, reason)) = config.violations().into_iter().next() {
        return Err(invalid(field, reason));
    }
    let value = mfg_value(setup, config.value_paths, seed.derive("value"))?;
    let (l, alpha) = (setup.reward.holder_l(), setup.reward.holder_alpha());
    let strategies = setup.family_strategies(&config.family)?;
    let mut rows = Vec::with_capacity(config.n_values.len());
    for &n in &config.n_values {
        let game_seed = seed.derive("games").derive_index(n as u64);
        let bound = theory_bound(n, l, alpha);
        let mut reps = config.initial_reps(n);
        let (batch, est, w) = loop {
            let batch = setup.play(n, reps, game_seed)?;
            let w = shift(n, reps);
            let est = summarize_games(setup, &batch, w.as_deref());
            let target = bound / 5.0;
            if config.reps.is_some() || est.stderr <= target || reps >= config.max_reps || !(est.stderr > 0.0) {
                break (batch, est, w);
            }
            let needed = (reps as f64 * (est.stderr / target).powi(2) * 1.1).ceil() as usize;
            reps = needed.clamp(reps + 1, config.max_reps);
        };
        let deviation = if config.family.is_empty() {
            None
        } else {
            Some(deviation_gap_on(setup, &batch, &strategies, game_seed, w.as_deref())?)
        };
        rows.push(NashRow {
            n,
            reps: est.reps,
            j_n: est.j_n,
            stderr: est.stderr,
            gap: est.gap_vs_value.abs(),
            gap_stderr: est.gap_stderr,
            theory_bound: bound,
            deviation,
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.gap)).collect();
    Ok(NashReport {
        rows,
        value,
        holder_l: l,
        holder_alpha: alpha,
        fit: rate_fit(&points).ok(),
        seed,
    })
}
