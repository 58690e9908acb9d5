use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::commands::Resolved;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run: enough to repeat it exactly with `goldilocks replay`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    /// Fully resolved inputs (rad/ps, 0-based sites); absent if resolution failed.
    pub config: Option<Resolved>,
    pub master_seed: Option<u64>,
    pub code_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub out_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub status: String,
    pub exit_code: i32,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn write(&mut self) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(MANIFEST_FILE);
        if !self.outputs.contains(&path) {
            self.outputs.push(path.clone());
        }
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
