//! Fixed point of the best-response map for the linear rank reward.
//!
//! `cargo run --release --example solve_equilibrium [paths]`

use rankmfg::fixed_point::{solve_equilibrium, uniqueness_certificate, FixedPointConfig};
use rankmfg::{CdfConvention, ModelParams, RewardSpec, Seed};

fn main() -> rankmfg::Result<()> {
    let paths = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let params = ModelParams::new(1.0, 0.0, 1.0, 1.0)?;
    let reward = RewardSpec::linear_rank();
    let config = FixedPointConfig {
        paths,
        tol_w1: 1e-2,
        base_steps: 200,
        ..FixedPointConfig::default()
    };
    let eq = solve_equilibrium(&params, &reward, &config, Seed(2024))?;
    for r in &eq.history {
        println!("iter {:>2}  W1 step {:.3e}  E[X^2] {:.4}", r.iteration, r.w1_step, r.second_moment);
    }
    println!(
        "converged {} residual {:.3e} (mc error {:.3e}), C0 = {:.2}",
        eq.converged, eq.residual, eq.residual_mc_error, eq.c0
    );
    let mu = &eq.mu_star;
    println!("mu*: mean {:.4}, quartiles {:.4} {:.4} {:.4}", mu.mean(), mu.quantile(0.25)?, mu.quantile(0.5)?, mu.quantile(0.75)?);

    let cert = uniqueness_certificate(&reward, mu, &rankmfg::EmpiricalMeasure::dirac(0.0), CdfConvention::Regular);
    println!("pairing against delta_0: {:.3e} (monotone: {})", cert.pairing, cert.monotone);
    Ok(())
}
