//! A whole experiment from a TOML config, as the `rankmfg run` command does it.

use std::fs;

use rankmfg::experiment::{run_experiment, RunOverrides};

const CONFIG: &str = r#"
seed = 42
stages = ["solve", "verify-nash", "common-noise", "value-sweep"]

[model]
sigma = 1.0
cost_c = 1.0
horizon_t = 1.0

[reward]
kind = "rank_power"
scale = 1.0
exponent = 1.0

[fixed_point]
paths = 10000
tol_w1 = 0.02
base_steps = 100

[nash]
n_values = [8, 16, 32, 64]
player_paths = 4096
value_paths = 10000

[common_noise]
sigma0 = 0.5
w_count = 3
paths = 10000

[value_sweep]
t_min = 0.0
t_max = 0.9
t_count = 4
x_min = -2.0
x_max = 2.0
x_count = 9
"#;

fn main() -> rankmfg::Result<()> {
    let dir = std::env::temp_dir().join("rankmfg-pipeline");
    fs::create_dir_all(&dir)?;
    let config = dir.join("experiment.toml");
    fs::write(&config, CONFIG)?;
    let outcome = run_experiment(&config, &RunOverrides::default())?;
    let m = outcome.manifest();
    for s in &m.stages {
        println!("{:<13} seed {:>20}  {:.2}s  {}", s.stage.name(), s.seed, s.seconds, s.status);
    }
    for f in &m.files {
        println!("{}  {}", &f.sha256[..16], f.path);
    }
    println!("outputs in {}", dir.join("out").display());
    std::process::exit(outcome.exit_code());
}
