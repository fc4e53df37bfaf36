use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rankmfg::experiment::{run_experiment, RunOutcome, RunOverrides, Stage};
use rankmfg::Error;

#[derive(Parser)]
#[command(name = "rankmfg", version, about = "Rank-based mean field game experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the mean field equilibrium.
    Solve(Common),
    /// Check the N-player epsilon-Nash rate against an equilibrium.
    VerifyNash(Common),
    /// Conditional fixed point and N-player check with common noise.
    CommonNoise(Common),
    /// Tabulate the value function and its derivatives.
    ValueSweep(Common),
    /// Run the stages listed in the config.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, stages) = match cli.command {
        Command::Solve(c) => (c, Some(vec![Stage::Solve])),
        Command::VerifyNash(c) => (c, Some(vec![Stage::VerifyNash])),
        Command::CommonNoise(c) => (c, Some(vec![Stage::CommonNoise])),
        Command::ValueSweep(c) => (c, Some(vec![Stage::ValueSweep])),
        Command::Run(c) => (c, None),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let overrides = RunOverrides {
        seed: common.seed,
        out: common.out,
        stages,
    };
    match run_experiment(&common.config, &overrides) {
        Ok(outcome) => {
            let m = outcome.manifest();
            for s in &m.stages {
                eprintln!("{:<13} {:>9.2}s  {}", s.stage.name(), s.seconds, s.status);
            }
            for f in &m.files {
                println!("{}  {}", f.sha256, f.path);
            }
            if let RunOutcome::StageFailed(_, e) = &outcome {
                eprintln!("error: {e}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(Error::Validation(v)) => {
            eprintln!("invalid config:");
            for line in v {
                eprintln!("  {line}");
            }
            ExitCode::from(2)
        }
        Err(e @ (Error::Parse { .. } | Error::InvalidParameter { .. } | Error::Io(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
