//! Versioned parameter archives.
//!
//! A checkpoint is a single JSON document holding everything needed to
//! reconstruct a trainer exactly: the config snapshot, every named
//! parameter tensor, all four optimizer states, the stage, and the
//! progress counters that key the derived noise streams. Floats survive
//! the JSON round trip bit-exactly (the serializer emits the shortest
//! string that parses back to the same double), so a reloaded model
//! reproduces a pinned-batch loss to the last bit.
//!
//! Two safety rails guard loading: a format version field, and a SHA-256
//! hash over the sorted (name, shape) parameter listing. The hash pins
//! the architecture — loading into a config that builds different
//! tensors fails with a checkpoint-mismatch error instead of silently
//! misassigning weights.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::TrainConfig;
use crate::meta::{Stage, Trainer};
use crate::nn::{Adam, ParamStore};

/// Archive format version; bumped on any layout change.
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named tensor, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl TensorEntry {
    fn from_array(a: &Array2<f64>) -> Self {
        TensorEntry {
            shape: [a.nrows(), a.ncols()],
            data: a.iter().copied().collect(),
        }
    }

    fn to_array(&self, name: &str) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone()).map_err(|_| {
            Error::Serde(format!(
                "tensor `{name}`: {} values do not fill shape {:?}",
                self.data.len(),
                self.shape
            ))
        })
    }
}

/// First and second Adam moments for every tensor an optimizer touched,
/// plus its step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub t: u64,
    pub slots: Vec<SlotEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    fn capture(opt: &Adam) -> Self {
        let slots = opt
            .state()
            .into_iter()
            .map(|(name, m, v)| SlotEntry {
                shape: [m.nrows(), m.ncols()],
                m: m.iter().copied().collect(),
                v: v.iter().copied().collect(),
                name,
            })
            .collect();
        OptimizerState { t: opt.t, slots }
    }

    fn apply(&self, opt: &mut Adam) -> Result<()> {
        let mut state = Vec::with_capacity(self.slots.len());
        for s in &self.slots {
            let dim = (s.shape[0], s.shape[1]);
            let m = Array2::from_shape_vec(dim, s.m.clone());
            let v = Array2::from_shape_vec(dim, s.v.clone());
            match (m, v) {
                (Ok(m), Ok(v)) => state.push((s.name.clone(), m, v)),
                _ => {
                    return Err(Error::Serde(format!(
                        "optimizer slot `{}`: moment length does not fill shape {:?}",
                        s.name, s.shape
                    )))
                }
            }
        }
        opt.restore(self.t, state);
        Ok(())
    }
}

/// Complete training state minus replay data (replay is reconstructed on
/// resume by re-collecting with the restored policy — see
/// [`Trainer::reseed_buffers`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// SHA-256 over the sorted parameter (name, shape) listing.
    pub arch_hash: String,
    pub stage: Stage,
    pub iter: usize,
    pub env_steps: usize,
    pub global_step: u64,
    pub trial_counter: u64,
    pub initial_loss: Option<f64>,
    pub config: TrainConfig,
    pub params: BTreeMap<String, TensorEntry>,
    pub opt_model: OptimizerState,
    pub opt_actor: OptimizerState,
    pub opt_critic: OptimizerState,
    pub opt_temp: OptimizerState,
}

fn hash_architecture(params: &BTreeMap<String, TensorEntry>) -> String {
    let mut h = Sha256::new();
    for (name, t) in params {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update(t.shape[0].to_le_bytes());
        h.update(t.shape[1].to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    /// Snapshot a trainer. The trainer is left untouched.
    pub fn capture(trainer: &Trainer) -> Self {
        let params: BTreeMap<String, TensorEntry> = trainer
            .store
            .iter()
            .map(|(name, a)| (name.clone(), TensorEntry::from_array(a)))
            .collect();
        let (global_step, trial_counter, initial_loss) = trainer.counters();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            arch_hash: hash_architecture(&params),
            stage: trainer.stage,
            iter: trainer.iter,
            env_steps: trainer.env_steps,
            global_step,
            trial_counter,
            initial_loss,
            config: trainer.cfg.clone(),
            opt_model: OptimizerState::capture(&trainer.opt_model),
            opt_actor: OptimizerState::capture(&trainer.opt_actor),
            opt_critic: OptimizerState::capture(&trainer.opt_critic),
            opt_temp: OptimizerState::capture(&trainer.opt_temp),
            params,
        }
    }

    /// Write the archive as JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    /// Read and verify an archive: format version first, then the
    /// architecture hash against a recomputation from the parameter
    /// listing itself.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "archive version {} (this build reads {})",
                ckpt.version, CHECKPOINT_VERSION
            )));
        }
        let recomputed = hash_architecture(&ckpt.params);
        if recomputed != ckpt.arch_hash {
            return Err(Error::CheckpointMismatch(
                "architecture hash does not match the parameter listing".into(),
            ));
        }
        Ok(ckpt)
    }

    /// Materialize the stored tensors as a parameter store.
    pub fn param_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, entry) in &self.params {
            store.insert(name, entry.to_array(name)?);
        }
        Ok(store)
    }

    /// Rebuild the trainer this checkpoint was captured from: same
    /// config, stage, parameters, optimizer moments, and progress
    /// counters. Replay buffers start empty (see module docs).
    pub fn into_trainer(&self) -> Result<Trainer> {
        self.resume_with(&self.config)
    }

    /// Like [`Checkpoint::into_trainer`] but under a caller-supplied
    /// config — the path for resuming with an extended schedule. The
    /// config must build the identical parameter set; schedule changes
    /// are fair game, architecture changes are rejected.
    pub fn resume_with(&self, cfg: &TrainConfig) -> Result<Trainer> {
        let mut t = Trainer::from_store(cfg, self.param_store()?, self.stage)?;
        self.opt_model.apply(&mut t.opt_model)?;
        self.opt_actor.apply(&mut t.opt_actor)?;
        self.opt_critic.apply(&mut t.opt_critic)?;
        self.opt_temp.apply(&mut t.opt_temp)?;
        t.iter = self.iter;
        t.env_steps = self.env_steps;
        t.restore_counters(self.global_step, self.trial_counter, self.initial_loss);
        Ok(t)
    }

    /// Start a new run from this checkpoint's parameters under a new
    /// config and stage — the entry point for the sparse second stage.
    /// Optimizers and counters start fresh; only the weights carry over.
    /// The new config must build the identical parameter set.
    pub fn into_stage(&self, cfg: &TrainConfig, stage: Stage) -> Result<Trainer> {
        Trainer::from_store(cfg, self.param_store()?, stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, EnvConfig, RewardMode, TaskFamily};
    use crate::latent::elbo_eval;
    use crate::latent::draw_noise;
    use crate::meta::{collect_trial, sequence_batch, PolicyKind};
    use crate::rng::substream;

    fn tiny_cfg() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.seed = 11;
        c.env = EnvConfig {
            family: TaskFamily::VelTrack,
            horizon: 6,
            ..EnvConfig::default()
        };
        c.tasks.num_train = 3;
        c.tasks.num_eval = 2;
        c.model.latent_dim = 3;
        c.model.feat_dim = 4;
        c.model.hidden = vec![8];
        c.agent.hidden = vec![16];
        c.schedule.episodes_per_trial = 2;
        c.schedule.num_iterations = 1;
        c.schedule.collect_tasks_per_iter = 2;
        c.schedule.train_steps_per_iter = 2;
        c.schedule.tasks_per_update = 2;
        c.schedule.model_batch_size = 24;
        c.schedule.agent_batch_size = 8;
        c.schedule.warmstart_trajectories = 3;
        c.schedule.warmstart_model_steps = 2;
        c.schedule.buffer_capacity = 200;
        c.schedule.eval_every = 0;
        c
    }

    /// Negative ELBO on one freshly collected trial under pinned noise —
    /// the probe used to compare original and reloaded parameters.
    fn pinned_batch_loss(t: &Trainer) -> f64 {
        let task = t.train_tasks[0].clone();
        let mut env = make_env(&t.cfg.env, &task, RewardMode::Shaped).unwrap();
        let mut rng = substream(999, "pinned-batch", 0);
        let (traj, _) = collect_trial(
            &t.model,
            &t.agent,
            &t.store,
            env.as_mut(),
            2,
            RewardMode::Shaped,
            PolicyKind::Random,
            424242,
            &mut rng,
        )
        .unwrap();
        let batch = sequence_batch(&[&traj], RewardMode::Shaped).unwrap();
        let mut noise_rng = substream(999, "pinned-noise", 0);
        let eps = draw_noise(
            t.model.latent_dim(),
            batch.horizon(),
            batch.num_sequences(),
            &mut noise_rng,
        );
        let (loss, _, _) = elbo_eval(&t.model, &t.store, &batch, &eps).unwrap();
        loss
    }

    fn trained_trainer() -> Trainer {
        let cfg = tiny_cfg();
        let mut t = Trainer::new(&cfg).unwrap();
        t.warmstart().unwrap();
        t.run_iteration().unwrap();
        t
    }

    #[test]
    fn save_load_reproduces_pinned_batch_loss_bit_exactly() {
        let t = trained_trainer();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::capture(&t).save(&path).unwrap();

        let restored = Checkpoint::load(&path).unwrap().into_trainer().unwrap();
        let a = pinned_batch_loss(&t);
        let b = pinned_batch_loss(&restored);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn restore_carries_optimizers_counters_and_bookkeeping() {
        let t = trained_trainer();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::capture(&t).save(&path).unwrap();
        let r = Checkpoint::load(&path).unwrap().into_trainer().unwrap();

        assert_eq!(r.iter, t.iter);
        assert_eq!(r.env_steps, t.env_steps);
        assert_eq!(r.counters(), t.counters());
        assert_eq!(r.opt_model.t, t.opt_model.t);
        assert_eq!(r.opt_actor.t, t.opt_actor.t);
        let sa = t.opt_model.state();
        let sb = r.opt_model.state();
        assert_eq!(sa.len(), sb.len());
        for ((na, ma, va), (nb, mb, vb)) in sa.iter().zip(&sb) {
            assert_eq!(na, nb);
            assert_eq!(ma, mb);
            assert_eq!(va, vb);
        }
        assert_eq!(r.store.flatten(), t.store.flatten());
        assert_eq!(r.stage, t.stage);
    }

    #[test]
    fn version_mismatch_is_a_checkpoint_error() {
        let t = trained_trainer();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut c = Checkpoint::capture(&t);
        c.version = 99;
        c.save(&path).unwrap();
        match Checkpoint::load(&path) {
            Err(Error::CheckpointMismatch(msg)) => assert!(msg.contains("99")),
            other => panic!("expected CheckpointMismatch, got {other:?}"),
        }
    }

    #[test]
    fn architecture_hash_detects_a_tampered_listing() {
        let t = trained_trainer();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut c = Checkpoint::capture(&t);
        let first = c.params.keys().next().unwrap().clone();
        let mut entry = c.params.remove(&first).unwrap();
        entry.shape = [entry.shape[1].max(1), entry.shape[0].max(1)];
        c.params.insert(format!("{first}_renamed"), entry);
        c.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn loading_into_an_incompatible_config_is_rejected() {
        let t = trained_trainer();
        let c = Checkpoint::capture(&t);
        let mut other = tiny_cfg();
        other.model.latent_dim = 5;
        assert!(matches!(
            c.into_stage(&other, Stage::Sparse),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn into_stage_reuses_weights_with_fresh_optimizers() {
        let t = trained_trainer();
        let c = Checkpoint::capture(&t);
        let s = c.into_stage(&t.cfg, Stage::Sparse).unwrap();
        assert_eq!(s.stage, Stage::Sparse);
        assert_eq!(s.store.flatten(), t.store.flatten());
        assert_eq!(s.opt_model.t, 0);
        assert_eq!(s.iter, 0);
        assert_eq!(s.env_steps, 0);
    }
}
