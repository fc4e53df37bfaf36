//! Common noise: the no-noise equilibrium shifted by sigma0 W_T.

use rankmfg::common_noise::{conditional_fixed_point_check, lift_equilibrium};
use rankmfg::fixed_point::{solve_equilibrium, FixedPointConfig};
use rankmfg::{ModelParams, RewardSpec, Seed};

fn main() -> rankmfg::Result<()> {
    let params = ModelParams::new(1.0, 0.0, 1.0, 1.0)?;
    let reward = RewardSpec::linear_rank();
    let fp = FixedPointConfig {
        paths: 20_000,
        tol_w1: 1e-2,
        base_steps: 200,
        ..FixedPointConfig::default()
    };
    let mu_bar = solve_equilibrium(&params, &reward, &fp, Seed(3))?.mu_star;

    let lifted = lift_equilibrium(&mu_bar, 0.8, 1.25, &reward)?;
    println!("mean {:.4} -> {:.4} after W_T = 1.25", mu_bar.mean(), lifted.mean());

    let noisy = ModelParams { sigma0: 0.8, ..params };
    let run = conditional_fixed_point_check(&mu_bar, &noisy, &reward, &fp.grid(1.0)?, 20_000, 5, Seed(4))?;
    run.write_csv(std::io::stdout().lock())?;
    println!(
        "max conditional W1 {:.3e}, bootstrap error {:.3e}",
        run.max_conditional_w1(),
        run.bootstrap_error
    );
    Ok(())
}
