//! Common noise by translation.
//!
//! With a rank-only reward, shifting every terminal state by the same amount
//! leaves all ranks unchanged. If `μ̄` is an equilibrium without common noise,
//! then `μ̄(· - σ₀ W_T)` is a (random) equilibrium with common noise, and the
//! equilibrium control is the no-common-noise feedback applied to the
//! idiosyncratic coordinate `X° = X - σ₀ W`. Simulations here build
//! `X = X° + σ₀ W` explicitly, with `W` drawn from its own substream so that
//! changing `σ₀` leaves the idiosyncratic draws untouched.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fixed_point::bootstrap_w1_error;
use crate::measure::EmpiricalMeasure;
use crate::model::{ModelParams, RewardSpec};
use crate::nash::{verify_nash_with_shift, NashConfig, NashReport, NashSetup};
use crate::rng::Seed;
use crate::sde::{optimal_strategy, simulate_strategy, TimeGrid};
use crate::value::ValueField;

fn require_rank_only(reward: &RewardSpec) -> Result<()> {
    if !reward.is_rank_only() {
        return Err(Error::UnsupportedMethod(
            "common-noise lifting needs a reward that depends on rank only".into(),
        ));
    }
    Ok(())
}

/// `μ̄(· - σ₀ w_T)`: atoms moved by `+σ₀ w_T`.
pub fn lift_equilibrium(
    mu_bar: &EmpiricalMeasure,
    sigma0: f64,
    w_terminal: f64,
    reward: &RewardSpec,
) -> Result<EmpiricalMeasure> {
    require_rank_only(reward)?;
    Ok(mu_bar.shift(-sigma0 * w_terminal))
}

/// Brownian path `W` at the grid nodes, from common substream `index`.
pub fn common_path(grid: &TimeGrid, seed: Seed, index: u64) -> Vec<f64> {
    let mut st = seed.derive("common").stream(index);
    let mut w = Vec::with_capacity(grid.nodes().len());
    w.push(0.0);
    let mut acc = 0.0;
    for pair in grid.nodes().windows(2) {
        acc += (pair[1] - pair[0]).sqrt() * st.normal();
        w.push(acc);
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommonNoiseRun {
    #[serde(skip)]
    pub base_equilibrium: EmpiricalMeasure,
    pub sigma0: f64,
    pub paths: usize,
    /// `W_T` of each sampled common path.
    pub w_terminal: Vec<f64>,
    /// `W₁` between the simulated conditional law and the lifted equilibrium.
    pub conditional_w1: Vec<f64>,
    /// The same statistic with `σ₀ = 0`, against `μ̄` itself.
    pub baseline_w1: Vec<f64>,
    /// Bootstrap estimate of the empirical `W₁` fluctuation at `paths`.
    pub bootstrap_error: f64,
}

impl CommonNoiseRun {
    pub fn max_conditional_w1(&self) -> f64 {
        self.conditional_w1.iter().cloned().fold(0.0, f64::max)
    }

    pub fn mean_conditional_w1(&self) -> f64 {
        self.conditional_w1.iter().sum::<f64>() / self.conditional_w1.len() as f64
    }

    pub fn mean_baseline_w1(&self) -> f64 {
        self.baseline_w1.iter().sum::<f64>() / self.baseline_w1.len() as f64
    }

    pub const CSV_HEADER: &'static str = "w_index,w_terminal,conditional_w1,baseline_w1";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (j, ((w, c), b)) in self
            .w_terminal
            .iter()
            .zip(&self.conditional_w1)
            .zip(&self.baseline_w1)
            .enumerate()
        {
            writeln!(out, "{j},{w:.16e},{c:.16e},{b:.16e}")?;
        }
        Ok(())
    }
}

/// For each of `w_count` common paths, simulates `paths` players under the
/// lifted equilibrium control and measures how far their terminal law given
/// `W` is from `μ̄(· - σ₀ W_T)`.
pub fn conditional_fixed_point_check(
    mu_bar: &EmpiricalMeasure,
    params: &ModelParams,
    reward: &RewardSpec,
    grid: &TimeGrid,
    paths: usize,
    w_count: usize,
    seed: Seed,
) -> Result<CommonNoiseRun> {
    require_rank_only(reward)?;
    if !(params.sigma0 > 0.0) {
        return Err(invalid("model.sigma0", "must be positive for a common-noise run"));
    }
    if w_count == 0 {
        return Err(invalid("w_count", "must be at least 1"));
    }
    let base = params.without_common_noise();
    let field = Arc::new(ValueField::new(base, reward.clone(), mu_bar.clone())?);
    let strategy = optimal_strategy(&field, grid)?;
    let mut w_terminal = Vec::with_capacity(w_count);
    let mut conditional_w1 = Vec::with_capacity(w_count);
    let mut baseline_w1 = Vec::with_capacity(w_count);
    let mut bootstrap_error = 0.0;
    for j in 0..w_count {
        let w = common_path(grid, seed, j as u64);
        let w_t = w[w.len() - 1];
        let batch = simulate_strategy(
            &strategy,
            &base,
            grid,
            paths,
            seed.derive("idiosyncratic").derive_index(j as u64),
        )?;
        let full: Vec<f64> = batch
            .terminal_values
            .iter()
            .map(|x| x + params.sigma0 * w_t)
            .collect();
        let conditional = EmpiricalMeasure::from_samples(full)?;
        let lifted = lift_equilibrium(mu_bar, params.sigma0, w_t, reward)?;
        w_terminal.push(w_t);
        conditional_w1.push(conditional.w1_distance(&lifted));
        baseline_w1.push(batch.terminal_measure()?.w1_distance(mu_bar));
        if j == 0 {
            bootstrap_error = bootstrap_w1_error(&batch.terminal_values, 10, seed.derive("bootstrap"))?;
        }
    }
    Ok(CommonNoiseRun {
        base_equilibrium: mu_bar.clone(),
        sigma0: params.sigma0,
        paths,
        w_terminal,
        conditional_w1,
        baseline_w1,
        bootstrap_error,
    })
}

/// The finite-player check with common noise.
///
/// Each replication draws one common path; player `i` ends at
/// `X°_i + σ₀ W_T` and is ranked among the full states, while the feedback
/// acts on `X°_i`. Deviations of the form `κ ā(t, x - σ₀ w_t)` read the
/// common noise and appear as scaled feedbacks of `X°`.
pub fn nplayer_common_noise_gap(
    mu_bar: &EmpiricalMeasure,
    params: &ModelParams,
    reward: &RewardSpec,
    grid: &TimeGrid,
    config: &NashConfig,
    seed: Seed,
) -> Result<NashReport> {
    require_rank_only(reward)?;
    if !(params.sigma0 >= 0.0) {
        return Err(invalid("model.sigma0", "must be non-negative"));
    }
    let setup = NashSetup::new(mu_bar.clone(), params, reward, grid.clone())?;
    let sigma0 = params.sigma0;
    let common_seed = seed.derive("common_noise");
    verify_nash_with_shift(&setup, config, seed, |n, reps| {
        let rung = common_seed.derive_index(n as u64);
        Some(
            (0..reps)
                .map(|r| {
                    let w = common_path(grid, rung, r as u64);
                    sigma0 * w[w.len() - 1]
                })
                .collect(),
        )
    })
}
