//! `wgf <subcommand> --config <path> --out <dir> --seed <u64> [--threads N]`
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wgf_core::experiments::{execute, Command, RunConfig};
use wgf_core::Error;

#[derive(Parser, Debug)]
#[command(name = "wgf", version, about = "Statistical JKO scheme experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// JKO trajectory under the configured estimation scheme.
    JkoRun(Common),
    /// Crank-Nicolson Fokker-Planck solution.
    FpRun(Common),
    /// Limiting field simulation.
    SpdeRun(Common),
    /// Bures-Wasserstein flow, discrete JKO and limit system.
    BwRun(Common),
    /// Parameter estimation only.
    Estimate(Common),
    /// Named experiment from `experiment.id`.
    Experiment(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for replication loops (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn run(command: Command, args: &Common) -> Result<(), Error> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let (cfg, bytes) = RunConfig::load(&args.config)?;
    let manifest = execute(command, &cfg, &bytes, &args.out, args.seed)?;
    log::info!("{} files written to {}", manifest.files.len(), args.out.display());
    for (k, v) in &manifest.metrics {
        println!("{k} = {v}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Sub::JkoRun(a) => (Command::JkoRun, a),
        Sub::FpRun(a) => (Command::FpRun, a),
        Sub::SpdeRun(a) => (Command::SpdeRun, a),
        Sub::BwRun(a) => (Command::BwRun, a),
        Sub::Estimate(a) => (Command::Estimate, a),
        Sub::Experiment(a) => (Command::Experiment, a),
    };
    match run(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
