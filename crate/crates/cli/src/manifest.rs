//! `manifest.json`: what produced an output directory.
//!
//! Timestamps come from `SOURCE_DATE_EPOCH` when it is set, so reruns of
//! the same command produce identical manifests.

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub arguments: serde_json::Value,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::missing(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn now() -> SystemTime {
    match std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse::<u64>().ok()) {
        Some(secs) => UNIX_EPOCH + Duration::from_secs(secs),
        None => SystemTime::now(),
    }
}

pub fn timestamp() -> String {
    humantime::format_rfc3339_seconds(now()).to_string()
}

/// Accumulates inputs and outputs while a command runs.
pub struct Recorder {
    pub dir: PathBuf,
    command: String,
    config: RunConfig,
    arguments: serde_json::Value,
    inputs: Vec<InputFile>,
    outputs: Vec<String>,
    started_at: String,
}

impl Recorder {
    pub fn new(dir: PathBuf, command: &str, config: RunConfig, arguments: serde_json::Value) -> CliResult<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::output(&dir, e))?;
        Ok(Recorder {
            dir,
            command: command.to_string(),
            config,
            arguments,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: timestamp(),
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::output(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(coopnet::Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self) -> CliResult<()> {
        let manifest = RunManifest {
            tool: "coopnet",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.config.sampler.seed,
            config: self.config,
            arguments: self.arguments,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: self.started_at,
            finished_at: timestamp(),
        };
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(coopnet::Error::from)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::output(&path, e))
    }
}
