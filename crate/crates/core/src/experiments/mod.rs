//! Config-driven runners for each subcommand and the named experiments.

pub mod artifacts;
pub mod config;
pub mod figures;
pub mod prop53;
pub mod runs;
pub mod svg;

pub use artifacts::{ArtifactWriter, FileEntry, Manifest};
pub use config::{ExperimentId, RunConfig};
pub use prop53::{prop53_exact_variance, prop53_limit, run_prop53, run_prop53_sweep};
pub use runs::scaled_difference;

use std::path::Path;
use std::time::Instant;

use crate::error::Result;

/// CLI subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    JkoRun,
    FpRun,
    SpdeRun,
    BwRun,
    Estimate,
    Experiment,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::JkoRun => "jko-run",
            Command::FpRun => "fp-run",
            Command::SpdeRun => "spde-run",
            Command::BwRun => "bw-run",
            Command::Estimate => "estimate",
            Command::Experiment => "experiment",
        }
    }
}

/// Run `command` into `out` and write the manifest. The config's own seed,
/// when set, takes precedence over `cli_seed`.
pub fn execute(command: Command, cfg: &RunConfig, config_bytes: &[u8], out: &Path, cli_seed: u64) -> Result<Manifest> {
    let start = Instant::now();
    let seed = cfg.seed(cli_seed);
    let mut writer = ArtifactWriter::new(out)?;
    match command {
        Command::JkoRun => runs::run_jko(cfg, seed, &mut writer)?,
        Command::FpRun => runs::run_fp(cfg, seed, &mut writer)?,
        Command::SpdeRun => runs::run_spde(cfg, seed, &mut writer)?,
        Command::BwRun => runs::run_bw(cfg, seed, &mut writer)?,
        Command::Estimate => runs::run_estimate(cfg, seed, &mut writer)?,
        Command::Experiment => figures::run_experiment(cfg, seed, &mut writer)?,
    }
    let experiment = match command {
        Command::Experiment => cfg.experiment.id.map(ExperimentId::name),
        _ => None,
    };
    writer.finish(command.name(), experiment, seed, config_bytes, start.elapsed().as_secs_f64())
}
