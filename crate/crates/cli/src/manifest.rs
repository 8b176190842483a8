//! Run manifest written next to every command's outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dronebar::ScenarioConfig;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved scenario, overrides applied.
    pub config: Option<ScenarioConfig>,
    pub seed: Option<u64>,
    pub wall_clock_seconds: f64,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub passed: bool,
    pub summary: Vec<String>,
}

pub struct ManifestBuilder {
    started: Instant,
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            started: Instant::now(),
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                config: None,
                seed: None,
                wall_clock_seconds: 0.0,
                outputs: Vec::new(),
                passed: true,
                summary: Vec::new(),
            },
        }
    }

    pub fn config(&mut self, config: &ScenarioConfig) {
        self.manifest.config = Some(config.clone());
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    /// Path of an output file, recorded in the manifest.
    pub fn output(&mut self, relative: &str) -> PathBuf {
        self.manifest.outputs.push(relative.to_string());
        self.out_dir.join(relative)
    }

    pub fn line(&mut self, line: impl Into<String>) {
        self.manifest.summary.push(line.into());
    }

    pub fn fail(&mut self) {
        self.manifest.passed = false;
    }

    pub fn finish(mut self) -> std::io::Result<RunManifest> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let path = self.out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}
