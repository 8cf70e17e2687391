//! Per-step trajectory logs, one JSON object per line.
//!
//! Evaluation runs record what the agent actually did, step by step, in
//! a grep-able append-only form. Raw image observations would dominate
//! the file many times over, so each record carries a SHA-256 digest of
//! its observation instead — enough to check determinism and detect
//! divergence between runs — alongside the full low-dimensional
//! diagnostic state, both reward channels, and the action taken.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::meta::Trajectory;

/// One line of the log: a single record of a single trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Running index over the trials written to this file.
    pub trial: usize,
    pub task_id: u64,
    /// Repetition index of this task's evaluation.
    pub rep: usize,
    /// Record index within the trial.
    pub t: usize,
    /// Hex SHA-256 of the observation's little-endian float bytes.
    pub obs_sha256: String,
    /// Action taken from this record; `None` on the final record.
    pub action: Option<Vec<f64>>,
    /// True where the environment was reset instead of stepped — the
    /// within-trial episode boundary.
    pub boundary: bool,
    pub shaped_reward: f64,
    pub sparse_reward: f64,
    pub success: bool,
    /// Last record of the trial.
    pub done: bool,
    /// Low-dimensional diagnostic state (empty at reset records).
    pub state: Vec<f64>,
}

/// Digest used in place of raw observations.
pub fn obs_digest(obs: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in obs {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Single-writer JSONL log; every trial is flushed as a unit.
pub struct TrajectoryLogger {
    writer: BufWriter<File>,
    path: PathBuf,
    trials_written: usize,
}

impl TrajectoryLogger {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(TrajectoryLogger {
            writer: BufWriter::new(file),
            path,
            trials_written: 0,
        })
    }

    /// Append one trial as `traj.len()` lines.
    pub fn log_trial(&mut self, rep: usize, traj: &Trajectory) -> Result<()> {
        let last = traj.len() - 1;
        for t in 0..traj.len() {
            let record = StepRecord {
                trial: self.trials_written,
                task_id: traj.task_id,
                rep,
                t,
                obs_sha256: obs_digest(&traj.obs[t]),
                action: (t < last).then(|| traj.actions[t].clone()),
                // `boundary[t]` flags the action row leading INTO record
                // t+1; re-keyed here so the flag sits on the reset record
                // itself.
                boundary: t == 0 || traj.boundary[t - 1],
                shaped_reward: traj.shaped[t],
                sparse_reward: traj.sparse[t],
                success: traj.success[t],
                done: t == last,
                state: traj.states[t].clone(),
            };
            let line = serde_json::to_string(&record)?;
            writeln!(self.writer, "{line}").map_err(|e| Error::io(&self.path, e))?;
        }
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        self.trials_written += 1;
        Ok(())
    }

    pub fn trials_written(&self) -> usize {
        self.trials_written
    }
}

/// Parse a full log back into records.
pub fn read_trajectory_log(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Serde(format!("trajectory log line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}
