//! Append-only provenance log (`runs.jsonl`).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use occbench::{Error, Result};

pub const RUNS_LOG: &str = "runs.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Milliseconds since the Unix epoch.
    pub started_ms: u64,
    pub finished_ms: Option<u64>,
    pub artifacts: Vec<PathBuf>,
    /// False when the command failed part-way; `error` then holds the cause.
    pub complete: bool,
    pub error: Option<String>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunRecord {
    pub fn start(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            started_ms: now_ms(),
            finished_ms: None,
            artifacts: Vec::new(),
            complete: false,
            error: None,
        }
    }

    pub fn finish(mut self, outcome: &Result<Vec<PathBuf>>) -> Self {
        self.finished_ms = Some(now_ms());
        match outcome {
            Ok(paths) => {
                self.artifacts = paths.clone();
                self.complete = true;
            }
            Err(e) => self.error = Some(e.to_string()),
        }
        self
    }

    /// Appends one JSON line to `dir/runs.jsonl`.
    pub fn append(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUNS_LOG);
        let mut line = serde_json::to_string(self).map_err(|e| Error::json(&path, e))?;
        line.push('\n');
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| Error::io(&path, e))
    }
}

pub fn read_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join(RUNS_LOG);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(&path, e)))
        .collect()
}
