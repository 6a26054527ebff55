//! `manifest.json`: what ran, with which parameters, and a checksum for
//! every file it produced.

use crate::config::RunConfig;
use crate::CliError;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config: RunConfig,
    pub threads: usize,
    pub status: String,
    pub error: Option<ErrorRecord>,
    /// Wall-clock seconds per phase, in execution order.
    pub timings: Vec<(String, f64)>,
    pub stop_reasons: Map<String, Value>,
    pub results: Map<String, Value>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects artifacts and bookkeeping while a scenario runs.
pub struct Recorder {
    dir: PathBuf,
    pub manifest: Manifest,
    clock: Instant,
}

impl Recorder {
    pub fn new(cfg: &RunConfig, threads: usize) -> Self {
        Recorder {
            dir: cfg.output_dir.clone(),
            manifest: Manifest {
                tool: "herdlab".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                scenario: cfg.scenario.to_string(),
                config: cfg.clone(),
                threads,
                status: "running".into(),
                error: None,
                timings: Vec::new(),
                stop_reasons: Map::new(),
                results: Map::new(),
                warnings: Vec::new(),
                artifacts: Vec::new(),
            },
            clock: Instant::now(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Closes the current phase.
    pub fn lap(&mut self, phase: &str) {
        let t = self.clock.elapsed().as_secs_f64();
        self.manifest.timings.push((phase.into(), t));
        self.clock = Instant::now();
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.manifest.results.insert(key.into(), v);
    }

    pub fn stop_reason(&mut self, key: &str, reason: impl ToString) {
        self.manifest
            .stop_reasons
            .insert(key.into(), Value::String(reason.to_string()));
    }

    /// Writes `name` under the output directory and records its checksum.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.manifest.artifacts.retain(|a| a.path != name);
        self.manifest.artifacts.push(Artifact {
            path: name.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Writes the artifact produced by `fill`.
    pub fn write_with(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn finish(mut self, outcome: &Result<(), CliError>) -> Result<Manifest, CliError> {
        match outcome {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = e.kind().into();
                self.manifest.error = Some(ErrorRecord {
                    kind: e.kind().into(),
                    message: e.to_string(),
                    exit_code: e.exit_code(),
                });
            }
        }
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Io(e.to_string()))?;
        let path = self.dir.join(MANIFEST_NAME);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(self.manifest)
    }
}
