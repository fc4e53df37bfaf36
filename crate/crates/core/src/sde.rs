//! Euler-Maruyama simulation of the controlled state
//! `dX = a(t, X) dt + σ dB`, `X_0 = 0`, with running cost `c a²`.
//!
//! Brownian increments are addressed by `(seed, step, path)` through
//! counter-based substreams, so a batch is bit-identical whatever the number
//! of worker threads.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::DriftTable;
use crate::error::{invalid, Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{ModelParams, RewardSpec};
use crate::rng::Seed;
use crate::value::ValueField;

/// Grid nodes `0 = t_0 < … < t_n = T`.
///
/// The body `[0, 0.9T]` is uniform. The last tenth uses
/// `t_k = T - (T/10)(1 - k/m)²`, `m = cluster · ⌈base_steps/10⌉`, so steps
/// shrink quadratically towards `T`, where the optimal drift is of order
/// `1/√(T - t)`. With `cluster <= 1` the whole grid is uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    base_steps: usize,
    cluster: u32,
}

pub fn make_time_grid(horizon: f64, base_steps: usize, cluster: u32) -> Result<TimeGrid> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon_t", "must be positive and finite"));
    }
    if base_steps < 2 {
        return Err(invalid("base_steps", "needs at least 2 steps"));
    }
    let nodes = if cluster <= 1 {
        let mut v: Vec<f64> = (0..base_steps)
            .map(|i| horizon * i as f64 / base_steps as f64)
            .collect();
        v.push(horizon);
        v
    } else {
        let tail = base_steps.div_ceil(10);
        let body = base_steps - tail;
        let split = 0.9 * horizon;
        let mut v: Vec<f64> = (0..body).map(|i| split * i as f64 / body as f64).collect();
        let m = cluster as usize * tail;
        for k in 0..m {
            let r = 1.0 - k as f64 / m as f64;
            v.push(horizon - 0.1 * horizon * r * r);
        }
        v.push(horizon);
        v
    };
    debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    Ok(TimeGrid {
        nodes,
        base_steps,
        cluster,
    })
}

impl TimeGrid {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    pub fn cluster(&self) -> u32 {
        self.cluster
    }

    /// Left endpoints `t_0 … t_{n-1}`, where drifts are frozen.
    pub fn drift_times(&self) -> &[f64] {
        &self.nodes[..self.nodes.len() - 1]
    }
}

/// An admissible control for [`simulate_strategy`].
#[derive(Clone)]
pub enum StrategySpec {
    Constant(f64),
    /// Piecewise constant in time: `values[i]` on `[breaks[i], breaks[i+1])`.
    Schedule { breaks: Vec<f64>, values: Vec<f64> },
    /// Feedback `a(t, x)` clamped to `[-bound, bound]`.
    Feedback {
        f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        bound: f64,
    },
    /// `scale · a*(τ_k, x)` with `τ_k` the tabulated times, one per step.
    Tabulated { table: Arc<DriftTable>, scale: f64 },
}

impl fmt::Debug for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Schedule { breaks, values } => {
                write!(f, "Schedule {{ breaks: {breaks:?}, values: {values:?} }}")
            }
            Self::Feedback { bound, .. } => write!(f, "Feedback {{ bound: {bound} }}"),
            Self::Tabulated { table, scale } => {
                write!(f, "Tabulated {{ nodes: {}, scale: {scale} }}", table.len())
            }
        }
    }
}

impl StrategySpec {
    pub fn zero() -> Self {
        Self::Constant(0.0)
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let unbounded = |what: &str| Err(Error::UnboundedControl(what.to_string()));
        match self {
            Self::Constant(c) if !c.is_finite() => unbounded("constant control is not finite"),
            Self::Schedule { breaks, values } => {
                if breaks.len() != values.len() || breaks.is_empty() {
                    return Err(invalid("schedule", "needs one value per break point"));
                }
                if breaks[0] > 0.0 || !breaks.windows(2).all(|w| w[0] < w[1]) {
                    return Err(invalid("schedule", "break points must increase from 0"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return unbounded("schedule value is not finite");
                }
                Ok(())
            }
            Self::Feedback { bound, .. } if !(bound.is_finite() && *bound >= 0.0) => {
                unbounded("feedback bound must be finite")
            }
            Self::Tabulated { table, scale } => {
                if !scale.is_finite() {
                    return unbounded("feedback scale is not finite");
                }
                if table.len() != grid.steps() {
                    return Err(invalid("strategy", "drift table does not match the time grid"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub(crate) fn drift(&self, k: usize, t: f64, x: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Schedule { breaks, values } => {
                values[breaks.partition_point(|&b| b <= t).saturating_sub(1)]
            }
            Self::Feedback { f, bound } => f(t, x).clamp(-bound, *bound),
            Self::Tabulated { table, scale } => scale * table.drift(k, x),
        }
    }
}

/// Terminal states and costs of `M` simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBatch {
    pub terminal_values: Vec<f64>,
    /// `∫ c a² dt` per path.
    pub effort_costs: Vec<f64>,
    /// `∫ |a| dt` per path.
    pub drift_integrals: Vec<f64>,
    pub seed: Seed,
    pub paths: usize,
}

impl SimBatch {
    pub fn terminal_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::from_samples(self.terminal_values.clone())
    }

    pub fn mean_terminal(&self) -> f64 {
        self.terminal_values.iter().sum::<f64>() / self.paths as f64
    }

    /// Rows `path_index,terminal_value,effort_cost`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "path_index,terminal_value,effort_cost")?;
        for (i, (x, e)) in self.terminal_values.iter().zip(&self.effort_costs).enumerate() {
            writeln!(out, "{i},{x:.16e},{e:.16e}")?;
        }
        Ok(())
    }
}

/// One path's terminal state, effort cost and absolute drift integral.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct PathOutcome {
    pub x: f64,
    pub effort: f64,
    pub abs_drift: f64,
}

/// Paths per noise substream.
pub(crate) const CHUNK: usize = 1024;

/// Advances many paths in lockstep over a grid.
///
/// The Brownian increment of path `p` at step `k` is draw number
/// `p % CHUNK` of substream `p / CHUNK` of `seed.derive_index(k)`. Paths
/// `0..m` of a larger batch are therefore reproduced exactly by a batch of
/// `m` paths under the same seed.
pub(crate) struct Stepper {
    times: Vec<f64>,
    dt: Vec<f64>,
    noise: Vec<f64>,
    cost_c: f64,
}

impl Stepper {
    pub(crate) fn new(grid: &TimeGrid, sigma: f64, cost_c: f64) -> Self {
        let dt: Vec<f64> = grid.nodes.windows(2).map(|w| w[1] - w[0]).collect();
        Self {
            times: grid.drift_times().to_vec(),
            noise: dt.iter().map(|d| sigma * d.sqrt()).collect(),
            dt,
            cost_c,
        }
    }

    pub(crate) fn steps(&self) -> usize {
        self.dt.len()
    }

    pub(crate) fn run(&self, strategy: &StrategySpec, seed: Seed, paths: usize) -> Vec<PathOutcome> {
        let mut state = vec![PathOutcome::default(); paths];
        for k in 0..self.steps() {
            let step_seed = seed.derive_index(k as u64);
            let (t, dt, noise) = (self.times[k], self.dt[k], self.noise[k]);
            match strategy {
                StrategySpec::Tabulated { table, scale } => {
                    let node = table.node(k);
                    let scale = *scale;
                    advance(&mut state, step_seed, dt, noise, move |x| scale * node.drift(x));
                }
                other => advance(&mut state, step_seed, dt, noise, |x| other.drift(k, t, x)),
            }
        }
        for o in &mut state {
            o.effort *= self.cost_c;
        }
        state
    }
}

fn advance<F: Fn(f64) -> f64 + Sync>(state: &mut [PathOutcome], seed: Seed, dt: f64, noise: f64, drift: F) {
    state.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut st = seed.stream(c as u64);
        for o in chunk {
            let a = drift(o.x);
            o.x += a * dt + noise * st.normal();
            o.effort += a * a * dt;
            o.abs_drift += a.abs() * dt;
        }
    });
}

fn check_no_common_noise(params: &ModelParams) -> Result<()> {
    if params.sigma0 != 0.0 {
        return Err(invalid(
            "model.sigma0",
            "the single-population simulator runs without common noise; use the common_noise module",
        ));
    }
    Ok(())
}

pub fn simulate_strategy(
    control: &StrategySpec,
    params: &ModelParams,
    grid: &TimeGrid,
    paths: usize,
    seed: Seed,
) -> Result<SimBatch> {
    check_no_common_noise(params)?;
    control.validate(grid)?;
    if paths == 0 {
        return Err(invalid("paths", "must be at least 1"));
    }
    let outcomes = Stepper::new(grid, params.sigma, params.cost_c).run(control, seed, paths);
    Ok(SimBatch {
        terminal_values: outcomes.iter().map(|o| o.x).collect(),
        effort_costs: outcomes.iter().map(|o| o.effort).collect(),
        drift_integrals: outcomes.iter().map(|o| o.abs_drift).collect(),
        seed,
        paths,
    })
}

/// Tabulated optimal drift of `field` on the grid's drift times.
pub fn optimal_strategy(field: &Arc<ValueField>, grid: &TimeGrid) -> Result<StrategySpec> {
    let table = DriftTable::build(field, grid.drift_times())?;
    Ok(StrategySpec::Tabulated {
        table: Arc::new(table),
        scale: 1.0,
    })
}

/// Paths under the optimal response `a*(t, x; μ)` to the terminal law `mu`.
pub fn simulate_optimal_terminal(
    mu: &EmpiricalMeasure,
    params: &ModelParams,
    reward: &RewardSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: Seed,
) -> Result<SimBatch> {
    check_no_common_noise(params)?;
    let field = Arc::new(ValueField::new(*params, reward.clone(), mu.clone())?);
    let strategy = optimal_strategy(&field, grid)?;
    simulate_strategy(&strategy, params, grid, paths, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::lemma_bounds;

    fn unit() -> ModelParams {
        ModelParams::new(1.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn grid_examples() {
        assert_eq!(make_time_grid(1.0, 2, 1).unwrap().nodes(), &[0.0, 0.5, 1.0]);
        assert_eq!(make_time_grid(2.0, 4, 1).unwrap().nodes(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        let g = make_time_grid(1.0, 100, 4).unwrap();
        let n = g.nodes();
        assert_eq!(n[0], 0.0);
        assert_eq!(*n.last().unwrap(), 1.0);
        assert!(n.windows(2).all(|w| w[0] < w[1]));
        assert!(n[n.len() - 1] - n[n.len() - 2] <= 1e-4);
        // Oracle: the clustering rule written out for the final segment.
        let m = 40;
        for k in 0..m {
            let r = 1.0 - k as f64 / m as f64;
            assert!(n.contains(&(1.0 - 0.1 * r * r)));
        }
        assert!(make_time_grid(1.0, 1, 1).is_err());
    }

    #[test]
    fn grid_spacing_stays_below_time_to_maturity() {
        for (b, c) in [(10, 2), (100, 4), (500, 4), (37, 3)] {
            let g = make_time_grid(3.0, b, c).unwrap();
            let n = g.nodes();
            for w in n.windows(2) {
                assert!(w[1] - w[0] <= 3.0 - w[0] + 1e-15);
            }
        }
    }

    #[test]
    fn zero_reward_gives_brownian_terminal_law() {
        let grid = make_time_grid(1.0, 20, 1).unwrap();
        let m = 100_000;
        let mu = EmpiricalMeasure::dirac(0.0);
        let zero = RewardSpec::constant(0.0).unwrap();
        let b = simulate_optimal_terminal(&mu, &unit(), &zero, &grid, m, Seed(7)).unwrap();
        let mean = b.mean_terminal();
        let var = b.terminal_values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m as f64;
        assert!(mean.abs() <= 3.0 / (m as f64).sqrt());
        assert!((var - 1.0).abs() <= 0.05);
        assert!(b.effort_costs.iter().all(|&e| e == 0.0));
        let one = RewardSpec::constant(1.0).unwrap();
        let b1 = simulate_optimal_terminal(&mu, &unit(), &one, &grid, m, Seed(7)).unwrap();
        assert_eq!(b, b1);
    }

    #[test]
    fn constant_controls() {
        let grid = make_time_grid(1.0, 50, 4).unwrap();
        let b = simulate_strategy(&StrategySpec::Constant(1.0), &unit(), &grid, 2000, Seed(1)).unwrap();
        for e in &b.effort_costs {
            assert!((e - 1.0).abs() < 1e-12);
        }
        let z = simulate_strategy(&StrategySpec::zero(), &unit(), &grid, 2000, Seed(1)).unwrap();
        for (x1, x0) in b.terminal_values.iter().zip(&z.terminal_values) {
            assert!((x1 - x0 - 1.0).abs() < 1e-12);
        }
        assert!(z.effort_costs.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn unbounded_controls_are_rejected() {
        let grid = make_time_grid(1.0, 10, 1).unwrap();
        let p = unit();
        let bad = [
            StrategySpec::Constant(f64::INFINITY),
            StrategySpec::Feedback {
                f: Arc::new(|_, x| x),
                bound: f64::INFINITY,
            },
            StrategySpec::Schedule {
                breaks: vec![0.0],
                values: vec![f64::NAN],
            },
        ];
        for s in bad {
            assert!(matches!(
                simulate_strategy(&s, &p, &grid, 10, Seed(0)),
                Err(Error::UnboundedControl(_))
            ));
        }
    }

    #[test]
    fn schedule_and_feedback_follow_their_definitions() {
        let grid = make_time_grid(1.0, 10, 1).unwrap();
        let s = StrategySpec::Schedule {
            breaks: vec![0.0, 0.5],
            values: vec![2.0, -1.0],
        };
        let b = simulate_strategy(&s, &unit(), &grid, 100, Seed(3)).unwrap();
        let z = simulate_strategy(&StrategySpec::zero(), &unit(), &grid, 100, Seed(3)).unwrap();
        for (i, x) in b.terminal_values.iter().enumerate() {
            assert!((x - z.terminal_values[i] - 0.5).abs() < 1e-12);
            assert!((b.effort_costs[i] - 2.5).abs() < 1e-12);
        }
        let fb = StrategySpec::Feedback {
            f: Arc::new(|_, _| 10.0),
            bound: 0.25,
        };
        let b = simulate_strategy(&fb, &unit(), &grid, 10, Seed(3)).unwrap();
        assert!(b.effort_costs.iter().all(|e| (e - 0.0625).abs() < 1e-12));
    }

    #[test]
    fn optimal_strategy_and_direct_simulation_agree_exactly() {
        let grid = make_time_grid(1.0, 40, 2).unwrap();
        let mu = EmpiricalMeasure::from_samples(vec![-0.3, 0.0, 0.4, 1.0]).unwrap();
        let reward = RewardSpec::linear_rank();
        let a = simulate_optimal_terminal(&mu, &unit(), &reward, &grid, 500, Seed(11)).unwrap();
        let field = Arc::new(ValueField::new(unit(), reward, mu).unwrap());
        let s = optimal_strategy(&field, &grid).unwrap();
        let b = simulate_strategy(&s, &unit(), &grid, 500, Seed(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drift_budget_respects_effort_cap() {
        let grid = make_time_grid(1.0, 100, 4).unwrap();
        let reward = RewardSpec::rank_power(3.0, 1.0).unwrap();
        let p = ModelParams::new(1.0, 0.0, 0.5, 1.0).unwrap();
        let mu = EmpiricalMeasure::from_samples(vec![-0.01, 0.0, 0.01]).unwrap();
        let b = simulate_optimal_terminal(&mu, &p, &reward, &grid, 5000, Seed(5)).unwrap();
        let cap = lemma_bounds(&p, &reward, 0.0).unwrap().effort_cap;
        assert!(b.drift_integrals.iter().all(|&d| d <= 1.05 * cap));
        assert!(b.effort_costs.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn common_noise_parameters_are_rejected() {
        let grid = make_time_grid(1.0, 10, 1).unwrap();
        let p = ModelParams::new(1.0, 0.5, 1.0, 1.0).unwrap();
        assert!(simulate_strategy(&StrategySpec::zero(), &p, &grid, 10, Seed(0)).is_err());
    }

    #[test]
    fn larger_reward_scale_raises_mean_terminal() {
        let grid = make_time_grid(1.0, 50, 2).unwrap();
        let mu = EmpiricalMeasure::dirac(0.0);
        let mut last = f64::NEG_INFINITY;
        for scale in [0.0, 0.5, 1.0, 2.0] {
            let reward = RewardSpec::rank_power(scale, 1.0).unwrap();
            let m = simulate_optimal_terminal(&mu, &unit(), &reward, &grid, 4000, Seed(2))
                .unwrap()
                .mean_terminal();
            assert!(m >= last);
            last = m;
        }
    }

    #[test]
    fn batches_are_prefix_consistent() {
        let grid = make_time_grid(1.0, 20, 2).unwrap();
        let s = StrategySpec::Feedback {
            f: Arc::new(|t, x| (1.0 - t) * x.sin()),
            bound: 1.0,
        };
        let big = simulate_strategy(&s, &unit(), &grid, 3 * CHUNK + 17, Seed(4)).unwrap();
        let small = simulate_strategy(&s, &unit(), &grid, CHUNK + 5, Seed(4)).unwrap();
        assert_eq!(&big.terminal_values[..CHUNK + 5], &small.terminal_values[..]);
        assert_eq!(&big.effort_costs[..CHUNK + 5], &small.effort_costs[..]);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let grid = make_time_grid(1.0, 20, 2).unwrap();
        let mu = EmpiricalMeasure::from_samples(vec![-0.2, 0.1, 0.3]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    simulate_optimal_terminal(&mu, &unit(), &RewardSpec::linear_rank(), &grid, 5000, Seed(6))
                        .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn csv_export() {
        let grid = make_time_grid(1.0, 4, 1).unwrap();
        let b = simulate_strategy(&StrategySpec::Constant(0.5), &unit(), &grid, 3, Seed(1)).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "path_index,terminal_value,effort_cost");
        assert!(lines[3].starts_with("2,"));
    }
}
