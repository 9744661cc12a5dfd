//! Batch front-end: configuration, command dispatch, CSV output and the run
//! manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mkvcyl_core::Exec;
use serde::Serialize;

pub use commands::{OutputFile, Outputs};
pub use config::{Command, RunConfig};
pub use error::{CliError, ErrorRecord};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub status: &'static str,
    pub artifact_version: &'static str,
    pub command: &'static str,
    pub timestamp_unix: u64,
    pub config: RunConfig,
    pub outputs: Vec<OutputFile>,
    pub summary: serde_json::Map<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

impl RunManifest {
    pub fn summary_f64(&self, key: &str) -> Option<f64> {
        self.summary.get(key)?.as_f64()
    }
}

/// Where a run writes: `--out` wins over the config's output directory,
/// which is resolved against the config file's directory.
pub fn output_dir(cfg: &RunConfig, config_dir: &Path, out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => config_dir.join(&cfg.output.directory),
    }
}

/// Runs a command and writes `manifest.json` next to its outputs. The
/// manifest is returned on failure too, carrying the error record.
pub fn run(
    cfg: &RunConfig,
    command: Command,
    out_dir: &Path,
    config_dir: &Path,
    exec: Exec,
) -> Result<RunManifest, (CliError, Option<RunManifest>)> {
    let mut out = Outputs::new(out_dir).map_err(|e| (e, None))?;
    let result = commands::execute(cfg, command, &mut out, config_dir, exec);
    let manifest = RunManifest {
        status: if result.is_ok() { "ok" } else { "error" },
        artifact_version: ARTIFACT_VERSION,
        command: command.name(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        config: cfg.clone(),
        outputs: out.files,
        summary: out.summary,
        error: result.as_ref().err().map(CliError::record),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = std::fs::write(out_dir.join("manifest.json"), text + "\n") {
        return Err((e.into(), Some(manifest)));
    }
    match result {
        Ok(()) => Ok(manifest),
        Err(e) => Err((e, Some(manifest))),
    }
}
