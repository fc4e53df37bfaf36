use std::fs;
use std::path::Path;
use std::process::Command;

const BASE: &str = r#"
seed = 5
stages = ["solve"]

[model]
sigma = 1.0
cost_c = 1.0
horizon_t = 1.0

[reward]
kind = "rank_power"
scale = 1.0
exponent = 1.0

[fixed_point]
paths = 2000
tol_w1 = 0.05
base_steps = 40
cluster = 1
"#;

fn rankmfg(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rankmfg")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn solve_succeeds_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), BASE);
    let a = dir.path().join("a").to_string_lossy().into_owned();
    let b = dir.path().join("b").to_string_lossy().into_owned();
    let (code, out_a, _) = rankmfg(&["solve", "--config", &cfg, "--out", &a, "--threads", "2"]);
    assert_eq!(code, 0);
    let (_, out_b, _) = rankmfg(&["solve", "--config", &cfg, "--out", &b]);
    assert_eq!(out_a, out_b);
    assert!(out_a.contains("equilibrium.csv"));
    assert!(Path::new(&a).join("manifest.json").is_file());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), BASE);
    let a = dir.path().join("a").to_string_lossy().into_owned();
    let b = dir.path().join("b").to_string_lossy().into_owned();
    let (_, out_a, _) = rankmfg(&["solve", "--config", &cfg, "--out", &a]);
    let (_, out_b, _) = rankmfg(&["solve", "--config", &cfg, "--out", &b, "--seed", "6"]);
    assert_ne!(out_a, out_b);
}

#[test]
fn validation_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &BASE.replace("sigma = 1.0", "sigma = -1.0"));
    let (code, _, err) = rankmfg(&["run", "--config", &cfg]);
    assert_eq!(code, 2);
    assert!(err.contains("model.sigma"), "{err}");
    let cfg = write(dir.path(), &BASE.replace("seed = 5", "sede = 5"));
    assert_eq!(rankmfg(&["run", "--config", &cfg]).0, 2);
}

#[test]
fn stage_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("mu.csv"), "location,weight\nnot a number\n").unwrap();
    let cfg = write(dir.path(), &BASE.replace("stages = [\"solve\"]", "equilibrium = \"mu.csv\""));
    let out = dir.path().join("o").to_string_lossy().into_owned();
    let (code, _, _) = rankmfg(&["verify-nash", "--config", &cfg, "--out", &out]);
    assert_eq!(code, 3);
    assert!(Path::new(&out).join("FAILED").is_file());
}

#[test]
fn non_convergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &BASE.replace("tol_w1 = 0.05", "tol_w1 = 1e-9\nmax_iters = 2"));
    let out = dir.path().join("o").to_string_lossy().into_owned();
    assert_eq!(rankmfg(&["run", "--config", &cfg, "--out", &out]).0, 4);
}
