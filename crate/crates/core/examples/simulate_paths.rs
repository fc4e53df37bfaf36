//! Euler paths under open-loop and optimal feedback controls.

use std::sync::Arc;

use rankmfg::sde::{make_time_grid, optimal_strategy, simulate_strategy, StrategySpec};
use rankmfg::{EmpiricalMeasure, ModelParams, RewardSpec, Seed, ValueField};

fn main() -> rankmfg::Result<()> {
    let params = ModelParams::new(1.0, 0.0, 1.0, 1.0)?;
    let grid = make_time_grid(1.0, 200, 4)?;
    let paths = 20_000;

    let idle = simulate_strategy(&StrategySpec::Constant(0.0), &params, &grid, paths, Seed(1))?;
    let push = simulate_strategy(&StrategySpec::Constant(0.5), &params, &grid, paths, Seed(1))?;
    println!("a = 0:   mean X_T {:.4}", idle.mean_terminal());
    println!("a = 0.5: mean X_T {:.4}, mean cost {:.4}", push.mean_terminal(), mean(&push.effort_costs));

    // best response to a crowd sitting at 0.3
    let field = Arc::new(ValueField::new(params, RewardSpec::linear_rank(), EmpiricalMeasure::dirac(0.3))?);
    let best = optimal_strategy(&field, &grid)?;
    let out = simulate_strategy(&best, &params, &grid, paths, Seed(1))?;
    let beat = out.terminal_values.iter().filter(|&&x| x >= 0.3).count() as f64 / paths as f64;
    println!("best response: P(X_T >= 0.3) = {beat:.4}, mean cost {:.4}", mean(&out.effort_costs));
    println!("value at (0, 0): {:.4}", field.value(0.0, 0.0)?);

    // a prefix of a larger batch is the smaller batch
    let small = simulate_strategy(&best, &params, &grid, 100, Seed(1))?;
    assert_eq!(small.terminal_values[..], out.terminal_values[..100]);
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
