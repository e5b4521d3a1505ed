//! Stage-based driver: each command reads manifest-listed artifacts from a
//! run directory and writes its own, so expensive stages can be cached.

mod config;
mod report;
mod stages;
mod store;
mod svg;

use std::path::{Path, PathBuf};

pub use config::{DataConfig, RunConfig, SplitRatios};
pub use report::{MISSING, REPORT};
pub use stages::{
    pass_rates, AttentionFile, CoefficientFile, ControlFeature, DetectionFile, Frozen, LabelFile, LensFile,
    PassRates, SaeMetrics, SelectionFile, SuiteFile, TransferFile, COMMANDS,
};
pub use store::{sha256_hex, ArtifactEntry, Manifest, RunDir, MANIFEST};

use crate::error::{Error, Result};

/// Hash of the config with the output location removed.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = None;
    sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
}

/// `--out` wins over the config's `out_dir`, which wins over `./run`.
pub fn resolve_out_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("run"))
}

/// Runs one command against the run directory `out`.
pub fn run_command(command: &str, cfg: &RunConfig, out: &Path) -> Result<()> {
    if !COMMANDS.contains(&command) {
        return Err(Error::Config(format!(
            "unknown command {command:?}; expected one of {}",
            COMMANDS.join(", ")
        )));
    }
    cfg.validate()?;
    let mut run = RunDir::open(out, config_hash(cfg), command == "gen-data")?;
    log::info!("running {command} in {}", out.display());
    stages::run_stage(command, cfg, &mut run)
}

/// Every command in order.
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<()> {
    for c in COMMANDS {
        run_command(c, cfg, out)?;
    }
    Ok(())
}
