//! Whole-trajectory replay storage, one ring buffer per task.
//!
//! Trials are never split: the latent model filters entire sequences, so
//! the unit of storage and of sampling is a whole trial. Capacity is
//! counted in records and enforced by evicting the oldest trials. Both
//! reward channels are stored on every record, which lets the sparse
//! training stage re-derive posterior evidence from data collected under
//! either channel.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom as _;
use serde::{Deserialize, Serialize};

use crate::envs::RewardMode;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One collected trial: `len()` records and `len() − 1` action rows.
/// Record 0 is the first reset observation (no action, zero rewards).
/// Reset records inside the trial look the same and are marked by the
/// `boundary` flag on their incoming action row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: u64,
    /// Flattened observation per record.
    pub obs: Vec<Vec<f64>>,
    /// Dense distance-based reward per record.
    pub shaped: Vec<f64>,
    /// Binary completion reward per record.
    pub sparse: Vec<f64>,
    /// Raw environment action leading into record i+1; all-zero where
    /// `boundary[i]` (the environment was reset instead of stepped).
    pub actions: Vec<Vec<f64>>,
    /// Marks episode-boundary rows of `actions`.
    pub boundary: Vec<bool>,
    /// Per-record completion predicate.
    pub success: Vec<bool>,
    /// Per-record diagnostic state (empty at reset records).
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Number of records.
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Number of action rows (= len − 1), episode boundaries included.
    pub fn num_steps(&self) -> usize {
        self.actions.len()
    }

    /// Real environment steps taken (action rows minus boundary rows).
    pub fn env_steps(&self) -> usize {
        self.boundary.iter().filter(|&&b| !b).count()
    }

    /// Reward value on the requested channel at record `t`.
    pub fn reward(&self, channel: RewardMode, t: usize) -> f64 {
        match channel {
            RewardMode::Shaped => self.shaped[t],
            RewardMode::Sparse => self.sparse[t],
        }
    }

    /// Action inputs for the latent model: the raw action with a trailing
    /// 0/1 episode-boundary flag.
    pub fn model_actions(&self) -> Vec<Vec<f64>> {
        self.actions
            .iter()
            .zip(&self.boundary)
            .map(|(a, &b)| {
                let mut row = a.clone();
                row.push(if b { 1.0 } else { 0.0 });
                row
            })
            .collect()
    }

    /// Internal-consistency check on the parallel arrays.
    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if t < 2 {
            return Err(Error::Usage(format!(
                "trajectory must have ≥ 2 records, got {t}"
            )));
        }
        let pairs = [
            ("shaped", self.shaped.len()),
            ("sparse", self.sparse.len()),
            ("success", self.success.len()),
            ("states", self.states.len()),
        ];
        for (name, n) in pairs {
            if n != t {
                return Err(Error::Usage(format!(
                    "trajectory field `{name}` has {n} entries for {t} records"
                )));
            }
        }
        for (name, n) in [
            ("actions", self.actions.len()),
            ("boundary", self.boundary.len()),
        ] {
            if n != t - 1 {
                return Err(Error::Usage(format!(
                    "trajectory field `{name}` has {n} entries for {t} records (want {})",
                    t - 1
                )));
            }
        }
        let obs_len = self.obs[0].len();
        if self.obs.iter().any(|o| o.len() != obs_len) {
            return Err(Error::Usage("trajectory has ragged observations".into()));
        }
        let d = self.actions.first().map_or(0, |a| a.len());
        if self.actions.iter().any(|a| a.len() != d) {
            return Err(Error::Usage("trajectory has ragged actions".into()));
        }
        Ok(())
    }
}

/// Ring buffer of whole trials for one task.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    trials: VecDeque<Trajectory>,
    records: usize,
}

impl ReplayBuffer {
    /// `capacity` is in records; the buffer always retains at least the
    /// most recent trial even if it alone exceeds the capacity.
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            trials: VecDeque::new(),
            records: 0,
        }
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        traj.validate()?;
        self.records += traj.len();
        self.trials.push_back(traj);
        while self.records > self.capacity && self.trials.len() > 1 {
            let old = self.trials.pop_front().expect("non-empty");
            self.records -= old.len();
        }
        Ok(())
    }

    pub fn num_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn num_records(&self) -> usize {
        self.records
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn get(&self, i: usize) -> &Trajectory {
        &self.trials[i]
    }

    /// Draw `n` trials uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<&Trajectory>> {
        if self.trials.is_empty() {
            return Err(Error::Usage("sample from an empty replay buffer".into()));
        }
        let pool: Vec<&Trajectory> = self.trials.iter().collect();
        Ok((0..n)
            .map(|_| *pool.choose(rng).expect("non-empty pool"))
            .collect())
    }
}

/// Per-task ring buffers keyed by task id.
#[derive(Debug, Clone, Default)]
pub struct ReplayBufferSet {
    capacity_per_task: usize,
    buffers: BTreeMap<u64, ReplayBuffer>,
}

impl ReplayBufferSet {
    pub fn new(capacity_per_task: usize) -> Self {
        ReplayBufferSet {
            capacity_per_task,
            buffers: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        self.buffers
            .entry(traj.task_id)
            .or_insert_with(|| ReplayBuffer::new(self.capacity_per_task))
            .push(traj)
    }

    pub fn buffer(&self, task_id: u64) -> Option<&ReplayBuffer> {
        self.buffers.get(&task_id)
    }

    /// Task ids with at least one stored trial, ascending.
    pub fn task_ids(&self) -> Vec<u64> {
        self.buffers
            .iter()
            .filter(|(_, b)| !b.is_empty())
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn total_trials(&self) -> usize {
        self.buffers.values().map(|b| b.num_trials()).sum()
    }

    pub fn total_records(&self) -> usize {
        self.buffers.values().map(|b| b.num_records()).sum()
    }

    pub fn sample(&self, task_id: u64, n: usize, rng: &mut Rng) -> Result<Vec<&Trajectory>> {
        match self.buffers.get(&task_id) {
            Some(b) if !b.is_empty() => b.sample(n, rng),
            _ => Err(Error::Usage(format!(
                "no stored trials for task {task_id}"
            ))),
        }
    }
}
