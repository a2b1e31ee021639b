//! Run manifests: the fully resolved configuration, seed, version, notes,
//! and per-phase wall-clock timings for every output directory.
//!
//! The manifest is written before any result file (with empty timings) and
//! rewritten once the run finishes, so a crashed run still leaves enough
//! information to reproduce the attempt.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Fully resolved configuration; re-running the command with this
    /// config reproduces the result files bitwise.
    pub config: serde_json::Value,
    #[serde(default)]
    pub notes: Vec<String>,
    /// Wall-clock seconds per phase.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            version: format!("brace {}", env!("CARGO_PKG_VERSION")),
            seed,
            config,
            notes: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        brace_core::io::write_json(&Self::path(dir), self)?;
        Ok(())
    }
}

/// Accumulates per-phase timings.
pub struct PhaseClock {
    started: Instant,
    pub timings: BTreeMap<String, f64>,
}

impl PhaseClock {
    pub fn start() -> Self {
        Self {
            started: Instant::now(),
            timings: BTreeMap::new(),
        }
    }

    /// Closes the current phase under `name` and starts the next one.
    pub fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.timings
            .insert(name.to_string(), now.duration_since(self.started).as_secs_f64());
        self.started = now;
    }
}
