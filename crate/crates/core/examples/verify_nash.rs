//! N-player games against a solved equilibrium and the 1/sqrt(N) bound.

use rankmfg::fixed_point::{solve_equilibrium, FixedPointConfig};
use rankmfg::nash::{dkw_check, verify_nash, Deviation, NashConfig, NashSetup};
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
    let eq = solve_equilibrium(&params, &reward, &fp, Seed(7))?;
    let setup = NashSetup::new(eq.mu_star, &params, &reward, fp.grid(1.0)?)?;

    let config = NashConfig {
        n_values: vec![8, 16, 32, 64, 128],
        player_paths: 1 << 13,
        value_paths: 20_000,
        family: vec![
            Deviation::Constant { value: 0.0 },
            Deviation::Scaled { factor: 1.5 },
        ],
        ..NashConfig::default()
    };
    let report = verify_nash(&setup, &config, Seed(8))?;
    println!("V = {:.5} (closed form {:.5})", report.value.value, report.value.closed_form);
    report.write_csv(std::io::stdout().lock())?;
    if let Some(fit) = &report.fit {
        println!("slope of |J_N - V| in N: {:.3}", fit.slope);
    }

    let dkw = dkw_check(100, 0.1, 2000, Seed(9))?;
    println!("DKW: {:.4} of draws exceed 0.1 (bound {:.4})", dkw.exceed_fraction, dkw.bound);
    Ok(())
}
