//! Configuration files, stage orchestration and run manifests.
//!
//! An experiment is one TOML file. Unknown keys are rejected. Every random
//! draw of every stage is derived from the single `seed` through labelled
//! substreams, so one file reproduces all outputs.
//!
//! ```toml
//! seed = 7
//! stages = ["solve", "verify-nash", "common-noise"]
//!
//! [model]
//! sigma = 1.0
//! cost_c = 1.0
//! horizon_t = 1.0
//!
//! [reward]
//! kind = "rank_power"
//! scale = 1.0
//! exponent = 1.0
//!
//! [fixed_point]
//! paths = 200000
//! max_iters = 50
//! tol_w1 = 0.005
//! ```

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::common_noise::{conditional_fixed_point_check, nplayer_common_noise_gap, CommonNoiseRun};
use crate::error::{Error, Result};
use crate::fixed_point::{solve_equilibrium, EquilibriumResult, FixedPointConfig};
use crate::measure::EmpiricalMeasure;
use crate::model::{ModelParams, RewardSpec, RewardTable};
use crate::nash::{verify_nash, NashConfig, NashReport, NashSetup};
use crate::rng::Seed;
use crate::value::ValueField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "solve")]
    Solve,
    #[serde(rename = "verify-nash")]
    VerifyNash,
    #[serde(rename = "common-noise")]
    CommonNoise,
    #[serde(rename = "value-sweep")]
    ValueSweep,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::VerifyNash => "verify-nash",
            Self::CommonNoise => "common-noise",
            Self::ValueSweep => "value-sweep",
        }
    }

    fn needs_equilibrium(self) -> bool {
        matches!(self, Self::VerifyNash | Self::CommonNoise)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the reward surface comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSource {
    Constant {
        value: f64,
    },
    RankPower {
        scale: f64,
        exponent: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holder_l: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holder_alpha: Option<f64>,
    },
    Mixed {
        rank_scale: f64,
        exponent: f64,
        abs_scale: f64,
        length: f64,
    },
    /// A CSV reward table; relative paths resolve against the config file.
    Table { path: PathBuf },
}

impl RewardSource {
    pub fn build(&self, base_dir: &Path) -> Result<RewardSpec> {
        match self {
            Self::Constant { value } => RewardSpec::constant(*value),
            Self::RankPower {
                scale,
                exponent,
                holder_l,
                holder_alpha,
            } => {
                let spec = RewardSpec::rank_power(*scale, *exponent)?;
                match (holder_l, holder_alpha) {
                    (None, None) => Ok(spec),
                    (l, a) => {
                        let l = l.unwrap_or(spec.holder_l());
                        let a = a.unwrap_or(spec.holder_alpha());
                        spec.with_holder(l, a)
                    }
                }
            }
            Self::Mixed {
                rank_scale,
                exponent,
                abs_scale,
                length,
            } => RewardSpec::mixed(*rank_scale, *exponent, *abs_scale, *length),
            Self::Table { path } => Ok(RewardSpec::tabulated(RewardTable::load(&base_dir.join(path))?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonNoiseConfig {
    pub sigma0: f64,
    #[serde(default = "default_w_count")]
    pub w_count: usize,
    /// Players per common path in the conditional check.
    #[serde(default = "default_cn_paths")]
    pub paths: usize,
    /// `N` ladder of the common-noise game; defaults to `nash.n_values`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_values: Option<Vec<usize>>,
}

fn default_w_count() -> usize {
    10
}
fn default_cn_paths() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSweepConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub t_count: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub x_count: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_fd_step() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Equilibrium measure file used when `solve` is not among the stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<PathBuf>,
    pub model: ModelParams,
    pub reward: RewardSource,
    #[serde(default)]
    pub fixed_point: FixedPointConfig,
    #[serde(default)]
    pub nash: NashConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub common_noise: Option<CommonNoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_sweep: Option<ValueSweepConfig>,
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Solve, Stage::VerifyNash, Stage::CommonNoise]
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated field as `section.field: reason`.
    pub fn violations(&self, base_dir: &Path) -> Vec<String> {
        let mut v = Vec::new();
        for (field, reason) in self.model.violations() {
            v.push(format!("model.{field}: {reason}"));
        }
        if self.model.sigma0 != 0.0 {
            v.push("model.sigma0: set common-noise volatility in [common_noise]".to_string());
        }
        match self.reward.build(base_dir) {
            Ok(spec) => {
                if let Err(e) = spec.validate(64) {
                    v.push(format!("reward: {e}"));
                }
            }
            Err(Error::InvalidParameter { field, reason }) => v.push(format!("{field}: {reason}")),
            Err(e) => v.push(format!("reward: {e}")),
        }
        for (field, reason) in self.fixed_point.violations() {
            v.push(format!("fixed_point.{field}: {reason}"));
        }
        if self.stages.contains(&Stage::VerifyNash) || self.stages.contains(&Stage::CommonNoise) {
            for (field, reason) in self.nash.violations() {
                v.push(format!("nash.{field}: {reason}"));
            }
        }
        if self.stages.is_empty() {
            v.push("stages: at least one stage is required".to_string());
        }
        if self.stages.iter().any(|s| s.needs_equilibrium()) && !self.stages.contains(&Stage::Solve) {
            match &self.equilibrium {
                None => v.push("equilibrium: required when `solve` is not run".to_string()),
                Some(p) if !base_dir.join(p).is_file() => {
                    v.push(format!("equilibrium: file {} does not exist", base_dir.join(p).display()))
                }
                _ => {}
            }
        }
        if self.stages.contains(&Stage::CommonNoise) {
            match &self.common_noise {
                None => v.push("common_noise: section required by the common-noise stage".to_string()),
                Some(cn) => {
                    if !(cn.sigma0 > 0.0 && cn.sigma0.is_finite()) {
                        v.push(format!("common_noise.sigma0: {} is not positive", cn.sigma0));
                    }
                    if cn.w_count == 0 {
                        v.push("common_noise.w_count: must be at least 1".to_string());
                    }
                    if cn.paths < 2 {
                        v.push("common_noise.paths: must be at least 2".to_string());
                    }
                    if matches!(&cn.n_values, Some(n) if n.is_empty() || n.iter().any(|&k| k < 2)) {
                        v.push("common_noise.n_values: each N must be >= 2".to_string());
                    }
                    if !matches!(&self.reward, RewardSource::Constant { .. } | RewardSource::RankPower { .. }) {
                        v.push("reward: common noise needs a rank-only reward".to_string());
                    }
                }
            }
        }
        if self.stages.contains(&Stage::ValueSweep) {
            match &self.value_sweep {
                None => v.push("value_sweep: section required by the value-sweep stage".to_string()),
                Some(s) => {
                    if !(s.t_min >= 0.0 && s.t_min <= s.t_max && s.t_max < self.model.horizon_t) {
                        v.push("value_sweep.t_max: needs 0 <= t_min <= t_max < T".to_string());
                    }
                    if s.t_count == 0 || s.x_count == 0 {
                        v.push("value_sweep.t_count: counts must be positive".to_string());
                    }
                    if !(s.x_min <= s.x_max) {
                        v.push("value_sweep.x_max: needs x_min <= x_max".to_string());
                    }
                    if !(s.fd_step > 0.0) {
                        v.push("value_sweep.fd_step: must be positive".to_string());
                    }
                }
            }
        }
        v
    }

    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        let v = self.violations(base_dir);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// One row of a value sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub t: f64,
    pub x: f64,
    pub u: f64,
    pub u_x: f64,
    pub u_xx: f64,
    pub v: f64,
    pub v_x: f64,
    pub a_star: f64,
    pub residual: f64,
}

pub fn value_sweep(field: &ValueField, cfg: &ValueSweepConfig) -> Result<Vec<SweepRow>> {
    let lin = |lo: f64, hi: f64, n: usize, i: usize| {
        if n == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut rows = Vec::with_capacity(cfg.t_count * cfg.x_count);
    for i in 0..cfg.t_count {
        let t = lin(cfg.t_min, cfg.t_max, cfg.t_count, i);
        for j in 0..cfg.x_count {
            let x = lin(cfg.x_min, cfg.x_max, cfg.x_count, j);
            let p = field.value_point(t, x)?;
            let residual = if t >= cfg.fd_step && t + cfg.fd_step < field.params().horizon_t {
                field.pde_residual(t, x, cfg.fd_step)?
            } else {
                f64::NAN
            };
            rows.push(SweepRow {
                t,
                x,
                u: p.u,
                u_x: p.u_x,
                u_xx: p.u_xx,
                v: p.v,
                v_x: p.v_x,
                a_star: p.a_star,
                residual,
            });
        }
    }
    Ok(rows)
}

/// Outputs of the stages that ran.
#[derive(Debug, Default)]
pub struct StageResults {
    pub equilibrium: Option<EquilibriumResult>,
    pub nash: Option<NashReport>,
    pub common_noise: Option<CommonNoiseRun>,
    pub common_noise_nash: Option<NashReport>,
    pub sweep: Option<Vec<SweepRow>>,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes every available table into `out_dir` and returns the files in
/// write order.
pub fn emit_tables(results: &StageResults, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, write: &dyn Fn(&mut BufWriter<fs::File>) -> std::io::Result<()>| -> Result<()> {
        let path = out_dir.join(name);
        let mut w = create(&path)?;
        write(&mut w)?;
        w.flush()?;
        files.push(path);
        Ok(())
    };
    if let Some(eq) = &results.equilibrium {
        emit("equilibrium.csv", &|w| eq.mu_star.write_csv(w))?;
        emit("iterations.csv", &|w| eq.write_history(w))?;
    }
    if let Some(r) = &results.nash {
        emit("nash.csv", &|w| r.write_csv(w))?;
    }
    if let Some(r) = &results.common_noise {
        emit("common_noise.csv", &|w| r.write_csv(w))?;
    }
    if let Some(r) = &results.common_noise_nash {
        emit("common_noise_nash.csv", &|w| r.write_csv(w))?;
    }
    if let Some(rows) = &results.sweep {
        emit("value_sweep.csv", &|w| {
            writeln!(w, "t,x,u,u_x,u_xx,v,v_x,a_star,residual")?;
            for r in rows {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    r.t, r.x, r.u, r.u_x, r.u_xx, r.v, r.v_x, r.a_star, r.residual
                )?;
            }
            Ok(())
        })?;
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seed: u64,
    pub seconds: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
    /// Key results per stage.
    pub summary: serde_json::Value,
    pub converged: Option<bool>,
    pub failed_stage: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// How a run ended.
#[derive(Debug)]
pub enum RunOutcome {
    Completed(RunManifest),
    /// The fixed point did not converge; later stages were skipped.
    NotConverged(RunManifest),
    StageFailed(RunManifest, Error),
}

impl RunOutcome {
    pub fn manifest(&self) -> &RunManifest {
        match self {
            Self::Completed(m) | Self::NotConverged(m) | Self::StageFailed(m, _) => m,
        }
    }

    /// 0 success, 3 stage failure, 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Completed(_) => 0,
            Self::StageFailed(..) => 3,
            Self::NotConverged(_) => 4,
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub stages: Option<Vec<Stage>>,
}

pub const FAILURE_MARKER: &str = "FAILED";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Loads, validates and runs the config at `config_path`.
///
/// Validation problems are returned as [`Error::Validation`]. Once stages
/// start, the outcome (including a stage failure) is reported through
/// [`RunOutcome`] and the manifest is always written.
pub fn run_experiment(config_path: &Path, overrides: &RunOverrides) -> Result<RunOutcome> {
    let text = fs::read(config_path)?;
    let mut config = ExperimentConfig::parse(&String::from_utf8_lossy(&text), config_path)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(stages) = &overrides.stages {
        config.stages = stages.clone();
    }
    let base_dir = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    config.validate(&base_dir)?;
    let out_dir = overrides
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|p| base_dir.join(p)))
        .unwrap_or_else(|| base_dir.join("out"));
    run_config(&config, &base_dir, &out_dir, sha256_hex(&text))
}

/// Runs an already validated config, writing into `out_dir`.
pub fn run_config(config: &ExperimentConfig, base_dir: &Path, out_dir: &Path, config_sha256: String) -> Result<RunOutcome> {
    fs::create_dir_all(out_dir)?;
    let marker = out_dir.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let master = Seed(config.seed);
    let reward = config.reward.build(base_dir)?;
    let mut stages = config.stages.clone();
    stages.sort();
    stages.dedup();

    let mut results = StageResults::default();
    let mut records = Vec::new();
    let mut summary = serde_json::Map::new();
    let mut mu_star: Option<EmpiricalMeasure> = None;
    let mut converged = None;
    let mut failure: Option<(Stage, Error)> = None;

    for stage in stages {
        let seed = master.derive(stage.name());
        let started = Instant::now();
        let outcome = run_stage(stage, config, base_dir, &reward, seed, &mut mu_star, &mut results, &mut summary);
        let status = match &outcome {
            Ok(true) => "ok",
            Ok(false) => "not_converged",
            Err(_) => "failed",
        };
        records.push(StageRecord {
            stage,
            seed: seed.0,
            seconds: started.elapsed().as_secs_f64(),
            status: status.to_string(),
        });
        match outcome {
            Ok(true) => {}
            Ok(false) => {
                converged = Some(false);
                break;
            }
            Err(e) => {
                failure = Some((stage, e));
                break;
            }
        }
        if stage == Stage::Solve {
            converged = Some(true);
        }
    }

    let files = emit_tables(&results, out_dir)?;
    let mut file_records = Vec::with_capacity(files.len());
    for f in &files {
        file_records.push(FileRecord {
            path: f.file_name().unwrap().to_string_lossy().into_owned(),
            sha256: sha256_hex(&fs::read(f)?),
        });
    }
    let manifest = RunManifest {
        config_sha256,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.seed,
        stages: records,
        files: file_records,
        summary: serde_json::Value::Object(summary),
        converged,
        failed_stage: failure.as_ref().map(|(s, _)| s.name().to_string()),
    };
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest).unwrap())?;
    Ok(match failure {
        Some((stage, e)) => {
            fs::write(&marker, format!("stage {stage} failed: {e}\n"))?;
            RunOutcome::StageFailed(
                manifest,
                Error::Stage {
                    stage: stage.name().to_string(),
                    source: Box::new(e),
                },
            )
        }
        None if converged == Some(false) => {
            fs::write(&marker, "stage solve did not converge\n")?;
            RunOutcome::NotConverged(manifest)
        }
        None => RunOutcome::Completed(manifest),
    })
}

/// Returns `Ok(false)` when the fixed point did not converge.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    stage: Stage,
    config: &ExperimentConfig,
    base_dir: &Path,
    reward: &RewardSpec,
    seed: Seed,
    mu_star: &mut Option<EmpiricalMeasure>,
    results: &mut StageResults,
    summary: &mut serde_json::Map<String, serde_json::Value>,
) -> Result<bool> {
    let params = config.model;
    let grid = config.fixed_point.grid(params.horizon_t)?;
    if stage.needs_equilibrium() && mu_star.is_none() {
        let path = base_dir.join(config.equilibrium.as_ref().expect("validated"));
        *mu_star = Some(EmpiricalMeasure::read_csv(std::io::BufReader::new(fs::File::open(&path)?))?);
    }
    match stage {
        Stage::Solve => {
            let eq = solve_equilibrium(&params, reward, &config.fixed_point, seed)?;
            let ok = eq.converged;
            summary.insert(
                "solve".into(),
                serde_json::json!({
                    "converged": eq.converged,
                    "iterations": eq.iterations(),
                    "residual": eq.residual,
                    "residual_mc_error": eq.residual_mc_error,
                    "c0": eq.c0,
                    "mean": eq.mu_star.mean(),
                    "second_moment": eq.mu_star.second_moment(),
                }),
            );
            *mu_star = Some(eq.mu_star.clone());
            results.equilibrium = Some(eq);
            Ok(ok)
        }
        Stage::VerifyNash => {
            let mu = mu_star.clone().expect("equilibrium available");
            let setup = NashSetup::new(mu, &params, reward, grid)?;
            let report = verify_nash(&setup, &config.nash, seed)?;
            summary.insert(
                "verify-nash".into(),
                serde_json::json!({
                    "value": report.value,
                    "fit": report.fit,
                    "holder_l": report.holder_l,
                    "holder_alpha": report.holder_alpha,
                }),
            );
            results.nash = Some(report);
            Ok(true)
        }
        Stage::CommonNoise => {
            let cn = config.common_noise.as_ref().expect("validated");
            let mu = mu_star.clone().expect("equilibrium available");
            let cn_params = ModelParams {
                sigma0: cn.sigma0,
                ..params
            };
            let run = conditional_fixed_point_check(
                &mu,
                &cn_params,
                reward,
                &grid,
                cn.paths,
                cn.w_count,
                seed.derive("conditional"),
            )?;
            let mut nash_cfg = config.nash.clone();
            if let Some(n) = &cn.n_values {
                nash_cfg.n_values = n.clone();
            }
            let report = nplayer_common_noise_gap(&mu, &cn_params, reward, &grid, &nash_cfg, seed.derive("games"))?;
            summary.insert(
                "common-noise".into(),
                serde_json::json!({
                    "max_conditional_w1": run.max_conditional_w1(),
                    "mean_conditional_w1": run.mean_conditional_w1(),
                    "mean_baseline_w1": run.mean_baseline_w1(),
                    "bootstrap_error": run.bootstrap_error,
                    "fit": report.fit,
                }),
            );
            results.common_noise = Some(run);
            results.common_noise_nash = Some(report);
            Ok(true)
        }
        Stage::ValueSweep => {
            let sweep = config.value_sweep.as_ref().expect("validated");
            let mu = match (mu_star.clone(), &config.equilibrium) {
                (Some(mu), _) => mu,
                (None, Some(p)) => {
                    EmpiricalMeasure::read_csv(std::io::BufReader::new(fs::File::open(base_dir.join(p))?))?
                }
                (None, None) => EmpiricalMeasure::dirac(0.0),
            };
            let field = ValueField::new(params, reward.clone(), mu)?;
            results.sweep = Some(value_sweep(&field, sweep)?);
            Ok(true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_point::IterateRecord;
    use crate::nash::{MfgValue, NashRow};

    const SMALL: &str = r#"
seed = 11
stages = ["solve"]

[model]
sigma = 1.0
cost_c = 1.0
horizon_t = 1.0

[reward]
kind = "constant"
value = 0.0

[fixed_point]
paths = 2000
max_iters = 5
tol_w1 = 0.05
base_steps = 40
cluster = 1
"#;

    fn parse(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text, Path::new("test.toml")).unwrap()
    }

    fn empty_report() -> NashReport {
        NashReport {
            rows: vec![],
            value: MfgValue {
                value: 0.5,
                stderr: 0.0,
                closed_form: 0.5,
                flagged: false,
            },
            holder_l: 1.0,
            holder_alpha: 1.0,
            fit: None,
            seed: Seed(0),
        }
    }

    #[test]
    fn toml_round_trip_is_fixed_point() {
        let c = parse(SMALL);
        let once = c.to_toml();
        let again = parse(&once);
        assert_eq!(c, again);
        assert_eq!(once, again.to_toml());
    }

    #[test]
    fn full_config_round_trip() {
        let text = format!(
            "{}\n[nash]\nn_values = [16, 32]\nreps = 64\n\n[common_noise]\nsigma0 = 1.0\nw_count = 3\n\n[value_sweep]\nt_min = 0.0\nt_max = 0.9\nt_count = 4\nx_min = -2.0\nx_max = 2.0\nx_count = 5\n",
            SMALL.replace("[fixed_point]", "[fixed_point]\nseed_policy = \"fresh\"\ninitial = { kind = \"normal\", mean = 0.0, std_dev = 2.0, atoms = 500 }")
        );
        let c = parse(&text);
        assert_eq!(c.nash.reps, Some(64));
        assert_eq!(c.common_noise.as_ref().unwrap().paths, 100_000);
        let again = parse(&c.to_toml());
        assert_eq!(c, again);
        let t = parse(&SMALL.replace("kind = \"constant\"\nvalue = 0.0", "kind = \"table\"\npath = \"r.csv\""));
        assert_eq!(t, parse(&t.to_toml()));
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = SMALL.replace("cost_c = 1.0", "cost_c = 1.0\ncots = 2.0");
        assert!(matches!(
            ExperimentConfig::parse(&bad, Path::new("x.toml")),
            Err(Error::Parse { .. })
        ));
        let bad = SMALL.replace("paths = 2000", "pahts = 2000");
        assert!(ExperimentConfig::parse(&bad, Path::new("x.toml")).is_err());
    }

    #[test]
    fn missing_seed_rejected() {
        let bad = SMALL.replace("seed = 11", "");
        assert!(ExperimentConfig::parse(&bad, Path::new("x.toml")).is_err());
    }

    #[test]
    fn validation_lists_every_field() {
        let c = parse(&SMALL.replace("sigma = 1.0", "sigma = -1.0").replace("cost_c = 1.0", "cost_c = 0.0"));
        let Err(Error::Validation(v)) = c.validate(Path::new(".")) else {
            panic!("expected validation error")
        };
        assert!(v.iter().any(|s| s.starts_with("model.sigma:")), "{v:?}");
        assert!(v.iter().any(|s| s.starts_with("model.cost_c:")), "{v:?}");
    }

    #[test]
    fn missing_files_fail_validation() {
        let mut c = parse(SMALL);
        c.stages = vec![Stage::VerifyNash];
        c.equilibrium = Some(PathBuf::from("nope.csv"));
        let v = c.violations(Path::new("/nonexistent"));
        assert!(v.iter().any(|s| s.starts_with("equilibrium:")), "{v:?}");
        c.reward = RewardSource::Table {
            path: PathBuf::from("missing.csv"),
        };
        let v = c.violations(Path::new("/nonexistent"));
        assert!(v.iter().any(|s| s.starts_with("reward")), "{v:?}");
    }

    #[test]
    fn common_noise_needs_section_and_rank_reward() {
        let mut c = parse(SMALL);
        c.stages = vec![Stage::Solve, Stage::CommonNoise];
        assert!(c.violations(Path::new(".")).iter().any(|s| s.starts_with("common_noise:")));
        c.common_noise = Some(CommonNoiseConfig {
            sigma0: 1.0,
            w_count: 2,
            paths: 100,
            n_values: None,
        });
        c.reward = RewardSource::Mixed {
            rank_scale: 1.0,
            exponent: 1.0,
            abs_scale: 0.1,
            length: 1.0,
        };
        assert!(c.violations(Path::new(".")).iter().any(|s| s.contains("rank-only")));
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let results = StageResults {
            nash: Some(empty_report()),
            ..Default::default()
        };
        let files = emit_tables(&results, dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let text = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end(), NashReport::CSV_HEADER);
    }

    #[test]
    fn one_row_report_has_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = empty_report();
        r.rows.push(NashRow {
            n: 16,
            reps: 100,
            j_n: 0.53,
            stderr: 0.01,
            gap: 0.03,
            gap_stderr: 0.001,
            theory_bound: 0.31,
            deviation: None,
        });
        let results = StageResults {
            nash: Some(r),
            ..Default::default()
        };
        let files = emit_tables(&results, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(&files[0]).unwrap().lines().count(), 2);
    }

    #[test]
    fn history_of_fifty_has_fifty_one_lines() {
        let dir = tempfile::tempdir().unwrap();
        let history = (1..=50)
            .map(|k| IterateRecord {
                iteration: k,
                w1_step: 1.0 / k as f64,
                second_moment: 1.0,
                damping: 1.0,
            })
            .collect();
        let eq = EquilibriumResult {
            mu_star: EmpiricalMeasure::dirac(0.0),
            history,
            converged: false,
            residual: 0.0,
            residual_mc_error: 0.0,
            c0: 1.0,
            moment_violations: vec![],
        };
        let results = StageResults {
            equilibrium: Some(eq),
            ..Default::default()
        };
        let files = emit_tables(&results, dir.path()).unwrap();
        let hist = files.iter().find(|f| f.ends_with("iterations.csv")).unwrap();
        let text = fs::read_to_string(hist).unwrap();
        assert_eq!(text.lines().count(), 51);
        let iters: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(iters.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn unwritable_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        let results = StageResults {
            nash: Some(empty_report()),
            ..Default::default()
        };
        assert!(emit_tables(&results, &file.join("sub")).is_err());
    }

    #[test]
    fn solve_only_run_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.toml");
        fs::write(&cfg, SMALL).unwrap();
        let run = |out: &str| {
            let o = RunOverrides {
                out: Some(dir.path().join(out)),
                ..Default::default()
            };
            run_experiment(&cfg, &o).unwrap()
        };
        let a = run("a");
        let b = run("b");
        assert_eq!(a.exit_code(), 0);
        let names: Vec<_> = a.manifest().files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, ["equilibrium.csv", "iterations.csv"]);
        assert_eq!(a.manifest().files, b.manifest().files);
        assert_eq!(a.manifest().stages[0].seed, Seed(11).derive("solve").0);
        assert!(dir.path().join("a").join(MANIFEST_FILE).is_file());
    }

    #[test]
    fn seed_override_changes_stage_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.toml");
        fs::write(&cfg, SMALL).unwrap();
        let o = RunOverrides {
            seed: Some(12),
            out: Some(dir.path().join("o")),
            ..Default::default()
        };
        let m = run_experiment(&cfg, &o).unwrap();
        assert_eq!(m.manifest().master_seed, 12);
        assert_eq!(m.manifest().stages[0].seed, Seed(12).derive("solve").0);
    }

    #[test]
    fn value_sweep_after_solve() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.toml");
        let text = format!(
            "{}\n[value_sweep]\nt_min = 0.0\nt_max = 0.5\nt_count = 2\nx_min = -1.0\nx_max = 1.0\nx_count = 3\n",
            SMALL.replace("stages = [\"solve\"]", "stages = [\"solve\", \"value-sweep\"]")
        );
        fs::write(&cfg, text).unwrap();
        let out = dir.path().join("o");
        let m = run_experiment(
            &cfg,
            &RunOverrides {
                out: Some(out.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.exit_code(), 0);
        let sweep = fs::read_to_string(out.join("value_sweep.csv")).unwrap();
        assert_eq!(sweep.lines().count(), 7);
        assert!(!out.join(FAILURE_MARKER).exists());
    }

    #[test]
    fn stage_failure_writes_marker() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.toml");
        fs::write(dir.path().join("mu.csv"), "location,weight\n0.0,abc\n").unwrap();
        let text = SMALL.replace("stages = [\"solve\"]", "stages = [\"verify-nash\"]\nequilibrium = \"mu.csv\"");
        fs::write(&cfg, text).unwrap();
        let out = dir.path().join("o");
        let m = run_experiment(
            &cfg,
            &RunOverrides {
                out: Some(out.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.exit_code(), 3);
        assert_eq!(m.manifest().failed_stage.as_deref(), Some("verify-nash"));
        assert!(out.join(FAILURE_MARKER).is_file());
        assert!(out.join(MANIFEST_FILE).is_file());
    }

    #[test]
    fn non_convergence_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.toml");
        let text = SMALL
            .replace("kind = \"constant\"\nvalue = 0.0", "kind = \"rank_power\"\nscale = 1.0\nexponent = 1.0")
            .replace("max_iters = 5", "max_iters = 1")
            .replace("tol_w1 = 0.05", "tol_w1 = 1e-9");
        fs::write(&cfg, text).unwrap();
        let out = dir.path().join("o");
        let m = run_experiment(
            &cfg,
            &RunOverrides {
                out: Some(out.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.exit_code(), 4);
        assert!(out.join(FAILURE_MARKER).is_file());
        assert!(out.join("equilibrium.csv").is_file());
    }
}
