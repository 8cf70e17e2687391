//! Run configuration: one TOML file drives training, evaluation, and the
//! second (sparse-reward) training stage.
//!
//! Every field has a default, so a config file only needs to spell out
//! deviations. Unknown keys are rejected — a typo'd hyperparameter must
//! fail loudly rather than silently train with the default. Validation
//! errors name the offending key and the allowed range.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::SacConfig;
use crate::envs::{EnvConfig, ObsSpec, TaskFamily};
use crate::error::{Error, Result};
use crate::latent::ModelArch;

/// Train/eval task-split sizes. Both splits are drawn from one stream, so
/// eval tasks are held out by construction (ids `num_train..`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub num_train: usize,
    pub num_eval: usize,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            num_train: 30,
            num_eval: 10,
        }
    }
}

/// Latent-model architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub latent_dim: usize,
    /// Encoder output width (pixel families).
    pub feat_dim: usize,
    /// Hidden widths of the posterior/dynamics/decoder MLPs.
    pub hidden: Vec<usize>,
    /// Channel progression of the stride-2 conv encoder (pixel families).
    pub conv_channels: Vec<usize>,
    /// Split the latent into two blocks with intra-step conditioning.
    pub two_layer: bool,
    /// Feed rewards to the posterior (disable for the ablation).
    pub reward_evidence: bool,
    pub lr: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_dim: 64,
            feat_dim: 64,
            hidden: vec![32, 32],
            conv_channels: vec![8, 16, 32],
            two_layer: false,
            reward_evidence: true,
            lr: 1e-4,
        }
    }
}

/// Belief-conditioned SAC hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temp_lr: f64,
    /// Entropy target; `None` → −action_dim.
    pub target_entropy: Option<f64>,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            hidden: vec![256, 256],
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temp_lr: 3e-4,
            target_entropy: None,
        }
    }
}

/// Meta-training loop schedule and batch sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    /// Episodes per trial; the belief carries across episodes of a trial.
    pub episodes_per_trial: usize,
    pub num_iterations: usize,
    /// Stop once this many environment steps were collected (0 = no cap).
    pub max_env_steps: usize,
    /// Tasks visited in each collection phase.
    pub collect_tasks_per_iter: usize,
    /// Trials collected per visited task.
    pub rollouts_per_task: usize,
    /// Gradient steps (one model + one agent step each) per iteration.
    pub train_steps_per_iter: usize,
    /// Tasks mixed into every gradient step.
    pub tasks_per_update: usize,
    /// Give the agent its own filtering pass instead of reusing the
    /// posterior samples from the model's gradient step.
    pub decouple_agent_batch: bool,
    /// Model batch size in transitions; converted to whole sequences.
    pub model_batch_size: usize,
    /// Agent batch size in transitions.
    pub agent_batch_size: usize,
    /// Random-policy trials collected before any training.
    pub warmstart_trajectories: usize,
    /// Model-only gradient steps on the warmstart data.
    pub warmstart_model_steps: usize,
    /// Per-task replay capacity in records; evicts oldest whole trials.
    pub buffer_capacity: usize,
    /// Evaluate every k iterations (0 = never).
    pub eval_every: usize,
    pub eval_trials_per_task: usize,
    /// Checkpoint every k iterations (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            episodes_per_trial: 2,
            num_iterations: 200,
            max_env_steps: 0,
            collect_tasks_per_iter: 20,
            rollouts_per_task: 1,
            train_steps_per_iter: 640,
            tasks_per_update: 20,
            decouple_agent_batch: false,
            model_batch_size: 512,
            agent_batch_size: 512,
            warmstart_trajectories: 60,
            warmstart_model_steps: 5000,
            buffer_capacity: 100_000,
            eval_every: 10,
            eval_trials_per_task: 3,
            checkpoint_every: 50,
        }
    }
}

/// Second-stage (sparse-reward) training knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseSection {
    /// Trials per train task recollected with the loaded first-stage
    /// policy to seed the stage-two buffers.
    pub seed_trials_per_task: usize,
    /// Probability that a batch sequence comes from the seeded first-stage
    /// data rather than fresh sparse-stage data.
    pub stage1_mix: f64,
}

impl Default for SparseSection {
    fn default() -> Self {
        SparseSection {
            seed_trials_per_task: 10,
            stage1_mix: 0.5,
        }
    }
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub tasks: TaskSection,
    pub model: ModelSection,
    pub agent: AgentSection,
    pub schedule: ScheduleSection,
    pub sparse: SparseSection,
}

impl TrainConfig {
    /// Parse and validate a TOML document.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// Records per trial (reset records included).
    pub fn trial_len(&self) -> usize {
        self.env.horizon_for_family() * self.schedule.episodes_per_trial
    }

    /// Whole sequences drawn per task per model step, derived from the
    /// transition-level batch size: max(1, round(batch / (tasks · len))).
    pub fn sequences_per_task(&self) -> usize {
        let per = self.schedule.model_batch_size as f64
            / (self.schedule.tasks_per_update * self.trial_len()) as f64;
        (per.round() as usize).max(1)
    }

    pub fn model_arch(&self) -> ModelArch {
        ModelArch {
            latent_dim: self.model.latent_dim,
            feat_dim: self.model.feat_dim,
            hidden: self.model.hidden.clone(),
            conv_channels: self.model.conv_channels.clone(),
            two_layer: self.model.two_layer,
            reward_evidence: self.model.reward_evidence,
            ..ModelArch::default()
        }
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden: self.agent.hidden.clone(),
            gamma: self.agent.gamma,
            tau: self.agent.tau,
            target_entropy: self.agent.target_entropy,
            ..SacConfig::default()
        }
    }

    /// Observation geometry implied by the environment section (task
    /// independent for all families with a fixed observation size).
    pub fn obs_spec(&self) -> ObsSpec {
        match self.env.family {
            TaskFamily::PointNav2d | TaskFamily::ButtonPanel => ObsSpec::Pixels {
                h: self.env.image_size,
                w: self.env.image_size,
                c: 1,
            },
            TaskFamily::VelTrack => ObsSpec::Proprio { d: 1 },
            // Observation width varies per task; resolved from a live env.
            TaskFamily::LgssDiagnostic => ObsSpec::Proprio { d: 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.tasks.num_train == 0 {
            return fail("tasks.num_train must be ≥ 1".into());
        }
        if self.tasks.num_eval == 0 {
            return fail("tasks.num_eval must be ≥ 1".into());
        }
        if self.model.latent_dim == 0 {
            return fail("model.latent_dim must be ≥ 1".into());
        }
        if self.model.two_layer && self.model.latent_dim % 2 != 0 {
            return fail(format!(
                "model.latent_dim = {} must be even when model.two_layer is set",
                self.model.latent_dim
            ));
        }
        if self.model.feat_dim == 0 {
            return fail("model.feat_dim must be ≥ 1".into());
        }
        let pixels = matches!(
            self.env.family,
            TaskFamily::PointNav2d | TaskFamily::ButtonPanel
        );
        if pixels {
            if self.model.conv_channels.is_empty() {
                return fail("model.conv_channels must be non-empty for pixel families".into());
            }
            let stages = self.model.conv_channels.len();
            if self.env.image_size % (1 << stages) != 0 {
                return fail(format!(
                    "env.image_size = {} must be divisible by 2^{stages} \
                     (one halving per conv stage)",
                    self.env.image_size
                ));
            }
        }
        for (key, lr) in [
            ("model.lr", self.model.lr),
            ("agent.actor_lr", self.agent.actor_lr),
            ("agent.critic_lr", self.agent.critic_lr),
            ("agent.temp_lr", self.agent.temp_lr),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return fail(format!("{key} = {lr} must be a positive finite number"));
            }
        }
        if !(0.0..1.0).contains(&self.agent.gamma) {
            return fail(format!(
                "agent.gamma = {} must lie in [0, 1)",
                self.agent.gamma
            ));
        }
        if !(self.agent.tau > 0.0 && self.agent.tau <= 1.0) {
            return fail(format!(
                "agent.tau = {} must lie in (0, 1]",
                self.agent.tau
            ));
        }
        let s = &self.schedule;
        for (key, v) in [
            ("schedule.episodes_per_trial", s.episodes_per_trial),
            ("schedule.num_iterations", s.num_iterations),
            ("schedule.collect_tasks_per_iter", s.collect_tasks_per_iter),
            ("schedule.rollouts_per_task", s.rollouts_per_task),
            ("schedule.train_steps_per_iter", s.train_steps_per_iter),
            ("schedule.tasks_per_update", s.tasks_per_update),
            ("schedule.model_batch_size", s.model_batch_size),
            ("schedule.agent_batch_size", s.agent_batch_size),
            ("schedule.eval_trials_per_task", s.eval_trials_per_task),
        ] {
            if v == 0 {
                return fail(format!("{key} must be ≥ 1"));
            }
        }
        if s.collect_tasks_per_iter > self.tasks.num_train {
            return fail(format!(
                "schedule.collect_tasks_per_iter = {} exceeds tasks.num_train = {}",
                s.collect_tasks_per_iter, self.tasks.num_train
            ));
        }
        if s.tasks_per_update > self.tasks.num_train {
            return fail(format!(
                "schedule.tasks_per_update = {} exceeds tasks.num_train = {}",
                s.tasks_per_update, self.tasks.num_train
            ));
        }
        if s.buffer_capacity < self.trial_len() {
            return fail(format!(
                "schedule.buffer_capacity = {} is below one trial ({} records)",
                s.buffer_capacity,
                self.trial_len()
            ));
        }
        if self.sparse.seed_trials_per_task == 0 {
            return fail("sparse.seed_trials_per_task must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.sparse.stage1_mix) {
            return fail(format!(
                "sparse.stage1_mix = {} must lie in [0, 1]",
                self.sparse.stage1_mix
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_documented_standard_run() {
        let c = TrainConfig::default();
        assert_eq!(c.tasks.num_train, 30);
        assert_eq!(c.tasks.num_eval, 10);
        assert_eq!(c.model.latent_dim, 64);
        assert_eq!(c.model.hidden, vec![32, 32]);
        assert_eq!(c.model.lr, 1e-4);
        assert_eq!(c.agent.hidden, vec![256, 256]);
        assert_eq!(c.agent.actor_lr, 3e-4);
        assert_eq!(c.agent.critic_lr, 3e-4);
        assert_eq!(c.agent.gamma, 0.99);
        assert_eq!(c.agent.tau, 0.005);
        assert_eq!(c.schedule.episodes_per_trial, 2);
        assert_eq!(c.schedule.train_steps_per_iter, 640);
        assert_eq!(c.schedule.tasks_per_update, 20);
        assert_eq!(c.schedule.collect_tasks_per_iter, 20);
        assert_eq!(c.schedule.model_batch_size, 512);
        assert_eq!(c.schedule.agent_batch_size, 512);
        assert_eq!(c.schedule.warmstart_trajectories, 60);
        assert_eq!(c.schedule.buffer_capacity, 100_000);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_round_trip_preserves_everything() {
        let mut c = TrainConfig::default();
        c.seed = 17;
        c.env.image_size = 16;
        c.model.hidden = vec![24];
        c.agent.target_entropy = Some(-1.5);
        let s = c.to_toml_string().unwrap();
        let back = TrainConfig::from_toml_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = TrainConfig::from_toml_str("[schedule]\nlearning_rate = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("config"), "unexpected message: {msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = TrainConfig::from_toml_str("seed = 5\n[env]\nfamily = \"veltrack\"\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.env.family, TaskFamily::VelTrack);
        assert_eq!(c.schedule.train_steps_per_iter, 640);
    }

    #[test]
    fn validation_names_offending_key() {
        let mut c = TrainConfig::default();
        c.agent.gamma = 1.2;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("agent.gamma"), "{msg}");

        let mut c = TrainConfig::default();
        c.schedule.tasks_per_update = 40;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("schedule.tasks_per_update"), "{msg}");

        let mut c = TrainConfig::default();
        c.env.image_size = 20; // not divisible by 2^3
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("env.image_size"), "{msg}");

        let mut c = TrainConfig::default();
        c.schedule.buffer_capacity = 10;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("schedule.buffer_capacity"), "{msg}");
    }

    #[test]
    fn sequence_budget_rounds_to_whole_trials() {
        // 512 transitions over 20 tasks × 80-record trials → 1 each.
        let c = TrainConfig::default();
        assert_eq!(c.trial_len(), 80);
        assert_eq!(c.sequences_per_task(), 1);
        // A 4× batch rounds up to 2 sequences per task.
        let mut big = TrainConfig::default();
        big.schedule.model_batch_size = 3200;
        assert_eq!(big.sequences_per_task(), 2);
        // Veltrack default horizon is 50 → 100-record trials.
        let mut v = TrainConfig::default();
        v.env.family = TaskFamily::VelTrack;
        assert_eq!(v.trial_len(), 100);
    }

    #[test]
    fn pixel_family_requires_conv_stack() {
        let mut c = TrainConfig::default();
        c.model.conv_channels.clear();
        assert!(c.validate().is_err());
        // Proprio families don't need one.
        c.env.family = TaskFamily::VelTrack;
        assert!(c.validate().is_ok());
    }
}
