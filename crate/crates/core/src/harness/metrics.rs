//! Append-only training metrics as comma-separated rows.
//!
//! One file per run, one row per training iteration. The first header
//! column pins the schema version so a reader never misinterprets a file
//! written by a different layout; every data row repeats the version in
//! that column. All values are plain numbers (no quoting), formatted with
//! Rust's shortest round-trip float representation, so identical runs
//! produce byte-identical files and `read_metrics` recovers the exact
//! written values.
//!
//! Evaluation columns are blank on iterations where the held-out
//! evaluation cadence did not fire. Per-episode evaluation returns are
//! reported for the first and last episode of the trial — the pair that
//! shows whether information gathered early in a trial pays off later.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::meta::IterationMetrics;

/// Version stamped into the header and every row.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Column layout of schema version 1, in file order.
pub const METRICS_HEADER: &str = "schema,iter,env_steps,collect_shaped,collect_sparse,\
model_loss,recon_obs,recon_reward,kl_initial,kl_dynamics,\
critic_loss,actor_loss,temperature_loss,alpha,entropy,\
eval_mean_shaped,eval_mean_sparse,eval_first_shaped,eval_last_shaped,\
eval_first_sparse,eval_last_sparse,eval_first_success,eval_last_success";

const NUM_COLUMNS: usize = 23;

/// One parsed row. Training columns are always present; the evaluation
/// block is `None` when the row was written without an eval pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub env_steps: usize,
    pub collect_shaped: f64,
    pub collect_sparse: f64,
    pub model_loss: f64,
    pub recon_obs: f64,
    pub recon_reward: f64,
    pub kl_initial: f64,
    pub kl_dynamics: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub eval: Option<EvalColumns>,
}

/// The evaluation block of a metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalColumns {
    pub mean_shaped: f64,
    pub mean_sparse: f64,
    pub first_shaped: f64,
    pub last_shaped: f64,
    pub first_sparse: f64,
    pub last_sparse: f64,
    pub first_success: f64,
    pub last_success: f64,
}

impl MetricsRow {
    /// Flatten an iteration record into the v1 column set.
    pub fn from_iteration(m: &IterationMetrics) -> Self {
        let eval = m.eval.as_ref().map(|e| {
            let last = e.ep_shaped.len() - 1;
            EvalColumns {
                mean_shaped: e.mean_shaped,
                mean_sparse: e.mean_sparse,
                first_shaped: e.ep_shaped[0],
                last_shaped: e.ep_shaped[last],
                first_sparse: e.ep_sparse[0],
                last_sparse: e.ep_sparse[last],
                first_success: e.ep_success[0],
                last_success: e.ep_success[last],
            }
        });
        MetricsRow {
            iter: m.iter,
            env_steps: m.env_steps,
            collect_shaped: m.collect_shaped_return,
            collect_sparse: m.collect_sparse_return,
            model_loss: m.model.loss,
            recon_obs: m.model.recon_obs,
            recon_reward: m.model.recon_reward,
            kl_initial: m.model.kl_initial,
            kl_dynamics: m.model.kl_dynamics,
            critic_loss: m.agent.critic_loss,
            actor_loss: m.agent.actor_loss,
            temperature_loss: m.agent.temperature_loss,
            alpha: m.agent.alpha,
            entropy: m.agent.entropy,
            eval,
        }
    }

    fn to_line(&self) -> String {
        let mut cols: Vec<String> = vec![
            METRICS_SCHEMA_VERSION.to_string(),
            self.iter.to_string(),
            self.env_steps.to_string(),
        ];
        for v in [
            self.collect_shaped,
            self.collect_sparse,
            self.model_loss,
            self.recon_obs,
            self.recon_reward,
            self.kl_initial,
            self.kl_dynamics,
            self.critic_loss,
            self.actor_loss,
            self.temperature_loss,
            self.alpha,
            self.entropy,
        ] {
            cols.push(v.to_string());
        }
        match &self.eval {
            Some(e) => {
                for v in [
                    e.mean_shaped,
                    e.mean_sparse,
                    e.first_shaped,
                    e.last_shaped,
                    e.first_sparse,
                    e.last_sparse,
                    e.first_success,
                    e.last_success,
                ] {
                    cols.push(v.to_string());
                }
            }
            None => cols.extend(std::iter::repeat(String::new()).take(8)),
        }
        debug_assert_eq!(cols.len(), NUM_COLUMNS);
        cols.join(",")
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != NUM_COLUMNS {
            return Err(Error::Serde(format!(
                "metrics line {lineno}: expected {NUM_COLUMNS} columns, found {}",
                cols.len()
            )));
        }
        let int = |i: usize| -> Result<usize> {
            cols[i].parse().map_err(|_| {
                Error::Serde(format!("metrics line {lineno}: bad integer `{}`", cols[i]))
            })
        };
        let num = |i: usize| -> Result<f64> {
            cols[i].parse().map_err(|_| {
                Error::Serde(format!("metrics line {lineno}: bad number `{}`", cols[i]))
            })
        };
        if int(0)? != METRICS_SCHEMA_VERSION as usize {
            return Err(Error::Serde(format!(
                "metrics line {lineno}: schema version {} (this reader handles {})",
                cols[0], METRICS_SCHEMA_VERSION
            )));
        }
        let eval_blank = cols[15..].iter().all(|c| c.is_empty());
        let eval = if eval_blank {
            None
        } else {
            Some(EvalColumns {
                mean_shaped: num(15)?,
                mean_sparse: num(16)?,
                first_shaped: num(17)?,
                last_shaped: num(18)?,
                first_sparse: num(19)?,
                last_sparse: num(20)?,
                first_success: num(21)?,
                last_success: num(22)?,
            })
        };
        Ok(MetricsRow {
            iter: int(1)?,
            env_steps: int(2)?,
            collect_shaped: num(3)?,
            collect_sparse: num(4)?,
            model_loss: num(5)?,
            recon_obs: num(6)?,
            recon_reward: num(7)?,
            kl_initial: num(8)?,
            kl_dynamics: num(9)?,
            critic_loss: num(10)?,
            actor_loss: num(11)?,
            temperature_loss: num(12)?,
            alpha: num(13)?,
            entropy: num(14)?,
            eval,
        })
    }
}

/// Single-writer metrics log. Each appended row is flushed to disk before
/// the call returns, so a crashed run keeps every completed iteration.
pub struct MetricsWriter {
    file: File,
    path: PathBuf,
}

impl MetricsWriter {
    /// Create the file (truncating any previous content) and write the
    /// versioned header row.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        file.flush().map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter { file, path })
    }

    /// Reopen an existing file for appending (used when resuming a run).
    /// The header is verified, not rewritten.
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let first = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?)
            .lines()
            .next()
            .transpose()
            .map_err(|e| Error::io(&path, e))?
            .unwrap_or_default();
        if first != METRICS_HEADER {
            return Err(Error::Serde(format!(
                "metrics file {} has an unrecognized header",
                path.display()
            )));
        }
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter { file, path })
    }

    /// Append one iteration and flush.
    pub fn append(&mut self, m: &IterationMetrics) -> Result<()> {
        let line = MetricsRow::from_iteration(m).to_line();
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Parse a full metrics file, verifying the header and the per-row schema
/// column. Trailing partial lines (from a crash mid-write) are rejected
/// like any other malformed row.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h == METRICS_HEADER => {}
        Some((_, Ok(h))) => {
            return Err(Error::Serde(format!(
                "metrics file {}: unrecognized header `{h}`",
                path.display()
            )))
        }
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(Error::Serde(format!("metrics file {} is empty", path.display()))),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        rows.push(MetricsRow::parse(&line, idx + 1)?);
    }
    Ok(rows)
}
