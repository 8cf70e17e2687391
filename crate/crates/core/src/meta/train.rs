//! The meta-training loop: alternate between collecting trials with the
//! current policy and taking joint model + agent gradient steps on
//! replayed trials.
//!
//! Each gradient step filters a fresh draw of whole trials from a subset
//! of tasks, updates the model on the sequence objective, and (by
//! default) hands the very same posterior samples to the agent as belief
//! features — one filtering pass feeds both losses. Evaluation runs on
//! held-out tasks with deterministic actions and its own noise streams,
//! so turning evaluation on or off never changes the training trace.
//!
//! Training runs in two stages. The dense stage filters on the shaped
//! reward channel. The sparse stage continues from a dense-stage
//! parameter set, feeds the sparse channel to the posterior while still
//! reconstructing (and computing critic targets from) the dense channel,
//! and mixes freshly collected sparse-stage trials with trials recollected
//! under the loaded dense-stage policy.

use rand::seq::SliceRandom as _;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentDiagnostics, SacAgent};
use crate::envs::{make_env, sample_tasks, RewardMode, Task};
use crate::error::{Error, Result};
use crate::harness::TrainConfig;
use crate::latent::{
    draw_noise, elbo_eval, train_model_step, BeliefBatch, ElboDiagnostics, LatentModel,
    SequenceBatch,
};
use crate::meta::batch::{
    agent_transitions, concat_agent_batches, sequence_batch, subsample_agent_batch,
};
use crate::meta::buffer::ReplayBufferSet;
use crate::meta::eval::{meta_test, EvalSummary};
use crate::meta::rollout::{collect_trial, PolicyKind, TrialResult};
use crate::nn::{Adam, ParamStore};
use crate::rng::substream;

/// Which reward channel the posterior conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Filter on the dense shaped channel (first stage).
    Dense,
    /// Filter on the sparse channel, reconstruct the dense one (second stage).
    Sparse,
}

impl Stage {
    pub fn evidence(self) -> RewardMode {
        match self {
            Stage::Dense => RewardMode::Shaped,
            Stage::Sparse => RewardMode::Sparse,
        }
    }
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    /// Cumulative environment steps so far.
    pub env_steps: usize,
    /// Mean per-trial returns of this iteration's collection phase.
    pub collect_shaped_return: f64,
    pub collect_sparse_return: f64,
    /// Mean model diagnostics over the iteration's gradient steps.
    pub model: ElboDiagnostics,
    /// Mean agent diagnostics over the iteration's gradient steps.
    pub agent: AgentDiagnostics,
    /// Held-out evaluation, when the cadence fires.
    pub eval: Option<EvalSummary>,
}

/// Everything a run owns: parameters, optimizers, tasks, and replay data.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub stage: Stage,
    pub model: LatentModel,
    pub agent: SacAgent,
    pub store: ParamStore,
    pub opt_model: Adam,
    pub opt_actor: Adam,
    pub opt_critic: Adam,
    pub opt_temp: Adam,
    pub train_tasks: Vec<Task>,
    pub eval_tasks: Vec<Task>,
    pub buffers: ReplayBufferSet,
    /// Dense-stage data backing the sparse stage (None in the dense stage).
    pub seed_buffers: Option<ReplayBufferSet>,
    pub env_steps: usize,
    pub iter: usize,
    global_step: u64,
    trial_counter: u64,
    initial_loss: Option<f64>,
}

impl Trainer {
    /// Fresh dense-stage trainer with freshly initialized parameters.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut tasks = sample_tasks(&cfg.env, cfg.tasks.num_train + cfg.tasks.num_eval, cfg.seed)?;
        let eval_tasks = tasks.split_off(cfg.tasks.num_train);
        // Observation/action geometry comes from a live environment so
        // every family (including task-dependent widths) resolves itself.
        let probe = make_env(&cfg.env, &tasks[0], RewardMode::Shaped)?;
        let obs_spec = probe.obs_spec();
        let action_dim = probe.action_dim();
        drop(probe);

        let model = LatentModel::new(cfg.model_arch(), obs_spec, action_dim + 1);
        let agent = SacAgent::new(
            cfg.sac_config(),
            crate::latent::BeliefState::feature_dim(cfg.model.latent_dim),
            action_dim,
        );
        let mut store = ParamStore::new();
        model.init(&mut store, &mut crate::rng::stream(cfg.seed, "init/model"));
        agent.init(&mut store, &mut crate::rng::stream(cfg.seed, "init/agent"));
        Ok(Trainer {
            stage: Stage::Dense,
            model,
            agent,
            store,
            opt_model: Adam::new(cfg.model.lr),
            opt_actor: Adam::new(cfg.agent.actor_lr),
            opt_critic: Adam::new(cfg.agent.critic_lr),
            opt_temp: Adam::new(cfg.agent.temp_lr),
            train_tasks: tasks,
            eval_tasks,
            buffers: ReplayBufferSet::new(cfg.schedule.buffer_capacity),
            seed_buffers: None,
            env_steps: 0,
            iter: 0,
            global_step: 0,
            trial_counter: 0,
            initial_loss: None,
            cfg: cfg.clone(),
        })
    }

    /// Continue from existing parameters (sparse stage, resumed runs).
    /// The store must carry exactly the parameter set this config builds.
    pub fn from_store(cfg: &TrainConfig, store: ParamStore, stage: Stage) -> Result<Self> {
        let mut t = Trainer::new(cfg)?;
        for (name, arr) in t.store.iter() {
            match store.try_get(name) {
                Some(have) if have.dim() == arr.dim() => {}
                Some(have) => {
                    return Err(Error::CheckpointMismatch(format!(
                        "parameter `{name}` has shape {:?}, this config builds {:?}",
                        have.dim(),
                        arr.dim()
                    )))
                }
                None => {
                    return Err(Error::CheckpointMismatch(format!(
                        "parameter `{name}` missing from the loaded store"
                    )))
                }
            }
        }
        if store.len() != t.store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "loaded store has {} parameters, this config builds {}",
                store.len(),
                t.store.len()
            )));
        }
        t.store = store;
        t.stage = stage;
        Ok(t)
    }

    /// Posterior evidence channel for the current stage.
    pub fn evidence(&self) -> RewardMode {
        self.stage.evidence()
    }

    /// Internal progress counters, in the order (gradient steps taken,
    /// trials collected, divergence-guard reference loss). Persisting and
    /// restoring them keeps every derived noise stream on its original
    /// schedule, since streams are keyed by these counters rather than by
    /// mutable generator state.
    pub fn counters(&self) -> (u64, u64, Option<f64>) {
        (self.global_step, self.trial_counter, self.initial_loss)
    }

    /// Restore the progress counters captured by [`Trainer::counters`].
    pub fn restore_counters(&mut self, global_step: u64, trial_counter: u64, initial_loss: Option<f64>) {
        self.global_step = global_step;
        self.trial_counter = trial_counter;
        self.initial_loss = initial_loss;
    }

    /// Refill empty replay buffers after a resume by collecting
    /// `trials_per_task` trials per training task with the current
    /// stochastic policy. Replay contents are not persisted in
    /// checkpoints, so a resumed run reconstructs a working data set
    /// from the restored parameters instead.
    pub fn reseed_buffers(&mut self, trials_per_task: usize) -> Result<()> {
        let evidence = self.evidence();
        for (i, task) in self.train_tasks.clone().iter().enumerate() {
            for r in 0..trials_per_task {
                let index = (i * trials_per_task + r) as u64;
                self.collect_one(
                    task,
                    PolicyKind::Stochastic,
                    evidence,
                    "rollout/resume",
                    index,
                    false,
                )?;
            }
        }
        Ok(())
    }

    /// Collect one trial on `task` and file it in the requested buffer
    /// set. Returns the trial outcome.
    fn collect_one(
        &mut self,
        task: &Task,
        policy: PolicyKind,
        evidence: RewardMode,
        label: &str,
        index: u64,
        into_seed: bool,
    ) -> Result<TrialResult> {
        let mut env = make_env(&self.cfg.env, task, evidence)?;
        let mut rng = substream(self.cfg.seed, label, index);
        let (traj, result) = collect_trial(
            &self.model,
            &self.agent,
            &self.store,
            env.as_mut(),
            self.cfg.schedule.episodes_per_trial,
            evidence,
            policy,
            index.wrapping_mul(1000),
            &mut rng,
        )?;
        self.env_steps += traj.env_steps();
        if into_seed {
            self.seed_buffers
                .as_mut()
                .expect("seed buffers exist")
                .push(traj)?;
        } else {
            self.buffers.push(traj)?;
        }
        Ok(result)
    }

    /// Random-policy data collection plus model-only pretraining.
    pub fn warmstart(&mut self) -> Result<()> {
        let n = self.cfg.schedule.warmstart_trajectories;
        let evidence = self.evidence();
        for k in 0..n {
            let task = self.train_tasks[k % self.train_tasks.len()].clone();
            self.collect_one(
                &task,
                PolicyKind::Random,
                evidence,
                "rollout/warmstart",
                k as u64,
                false,
            )?;
        }
        for s in 0..self.cfg.schedule.warmstart_model_steps {
            let mut rng_s = substream(self.cfg.seed, "sample/warmstart", s as u64);
            let batches = self.sample_sequences(&mut rng_s)?;
            let mut rng_m = substream(self.cfg.seed, "model-noise/warmstart", s as u64);
            let (diag, _) = train_model_step(
                &self.model,
                &mut self.store,
                &mut self.opt_model,
                &batches,
                &mut rng_m,
            )?;
            self.guard(diag.loss)?;
        }
        Ok(())
    }

    /// Recollect trials with the loaded dense-stage policy to seed the
    /// sparse stage. Filtering runs on the dense channel — the loaded
    /// parameters were trained under it — while storage keeps both.
    pub fn seed_stage_buffers(&mut self) -> Result<()> {
        self.seed_buffers = Some(ReplayBufferSet::new(self.cfg.schedule.buffer_capacity));
        let per_task = self.cfg.sparse.seed_trials_per_task;
        for (i, task) in self.train_tasks.clone().iter().enumerate() {
            for r in 0..per_task {
                let index = (i * per_task + r) as u64;
                self.collect_one(
                    task,
                    PolicyKind::Stochastic,
                    RewardMode::Shaped,
                    "rollout/seed",
                    index,
                    true,
                )?;
            }
        }
        Ok(())
    }

    /// Task ids with data available to train on.
    fn available_task_ids(&self) -> Vec<u64> {
        let mut ids = self.buffers.task_ids();
        if let Some(seed) = &self.seed_buffers {
            ids.extend(seed.task_ids());
            ids.sort_unstable();
            ids.dedup();
        }
        ids
    }

    /// Draw the per-step task subset and one sequence batch per task.
    fn sample_sequences(&self, rng: &mut crate::rng::Rng) -> Result<Vec<SequenceBatch>> {
        let avail = self.available_task_ids();
        if avail.is_empty() {
            return Err(Error::Usage(
                "no collected data to train on (warmstart first)".into(),
            ));
        }
        let k = self.cfg.schedule.tasks_per_update.min(avail.len());
        let mut chosen: Vec<u64> = avail.choose_multiple(rng, k).cloned().collect();
        chosen.sort_unstable();
        let n_seq = self.cfg.sequences_per_task();
        let evidence = self.evidence();
        chosen
            .iter()
            .map(|&tid| {
                let trials = self.draw_trials(tid, n_seq, rng)?;
                sequence_batch(&trials, evidence)
            })
            .collect()
    }

    /// Pick `n` trials for one task, mixing in dense-stage seed data
    /// during the sparse stage.
    fn draw_trials(
        &self,
        tid: u64,
        n: usize,
        rng: &mut crate::rng::Rng,
    ) -> Result<Vec<&crate::meta::buffer::Trajectory>> {
        let seed_set = match (&self.seed_buffers, self.stage) {
            (Some(s), Stage::Sparse) => Some(s),
            _ => None,
        };
        let Some(seed_set) = seed_set else {
            return self.buffers.sample(tid, n, rng);
        };
        let seed_has = seed_set.buffer(tid).is_some_and(|b| !b.is_empty());
        let fresh_has = self.buffers.buffer(tid).is_some_and(|b| !b.is_empty());
        if !seed_has && !fresh_has {
            return Err(Error::Usage(format!("no stored trials for task {tid}")));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let use_seed = if seed_has && fresh_has {
                rng.gen_bool(self.cfg.sparse.stage1_mix)
            } else {
                seed_has
            };
            let src = if use_seed { seed_set } else { &self.buffers };
            out.extend(src.sample(tid, 1, rng)?);
        }
        Ok(out)
    }

    /// Abort the run if the model loss blows up relative to its first value.
    fn guard(&mut self, loss: f64) -> Result<()> {
        match self.initial_loss {
            None => {
                self.initial_loss = Some(loss);
                Ok(())
            }
            Some(init) if loss > 10.0 * init.abs() + 1.0 => Err(Error::Divergence(format!(
                "model loss {loss:.4} exceeded 10·|{init:.4}| + 1"
            ))),
            _ => Ok(()),
        }
    }

    /// One model step plus one agent step on a shared filtering pass.
    pub fn train_step_once(&mut self) -> Result<(ElboDiagnostics, AgentDiagnostics)> {
        let gs = self.global_step;
        self.global_step += 1;
        let mut rng_s = substream(self.cfg.seed, "sample/train", gs);
        let batches = self.sample_sequences(&mut rng_s)?;
        let mut rng_m = substream(self.cfg.seed, "model-noise/train", gs);
        let (ediag, beliefs) = train_model_step(
            &self.model,
            &mut self.store,
            &mut self.opt_model,
            &batches,
            &mut rng_m,
        )?;
        self.guard(ediag.loss)?;

        let (agent_batches, agent_beliefs): (Vec<SequenceBatch>, Vec<BeliefBatch>) =
            if self.cfg.schedule.decouple_agent_batch {
                // Dedicated pass: fresh sequences filtered by the
                // just-updated model, gradients nowhere.
                let fresh = self.sample_sequences(&mut rng_s)?;
                let bels = fresh
                    .iter()
                    .map(|b| {
                        let eps = draw_noise(
                            self.model.latent_dim(),
                            b.horizon(),
                            b.num_sequences(),
                            &mut rng_m,
                        );
                        elbo_eval(&self.model, &self.store, b, &eps).map(|(_, _, bel)| bel)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (fresh, bels)
            } else {
                (batches, beliefs)
            };

        let parts = agent_batches
            .iter()
            .zip(&agent_beliefs)
            .map(|(b, bel)| agent_transitions(b, bel))
            .collect::<Result<Vec<_>>>()?;
        let full = concat_agent_batches(&parts)?;
        let mut rng_a = substream(self.cfg.seed, "agent-noise/train", gs);
        let batch =
            subsample_agent_batch(&full, self.cfg.schedule.agent_batch_size, &mut rng_a);
        let adiag = self.agent.train_step(
            &mut self.store,
            &mut self.opt_actor,
            &mut self.opt_critic,
            &mut self.opt_temp,
            &batch,
            &mut rng_a,
        )?;
        Ok((ediag, adiag))
    }

    /// Collection phase: visit a task subset with the stochastic policy.
    fn collect_phase(&mut self) -> Result<(f64, f64)> {
        let mut rng_t = substream(self.cfg.seed, "collect-tasks", self.iter as u64);
        let chosen: Vec<Task> = self
            .train_tasks
            .choose_multiple(&mut rng_t, self.cfg.schedule.collect_tasks_per_iter)
            .cloned()
            .collect();
        let evidence = self.evidence();
        let (mut shaped, mut sparse, mut n) = (0.0, 0.0, 0usize);
        for task in &chosen {
            for _ in 0..self.cfg.schedule.rollouts_per_task {
                let index = self.trial_counter;
                self.trial_counter += 1;
                let res = self.collect_one(
                    task,
                    PolicyKind::Stochastic,
                    evidence,
                    "rollout/train",
                    index,
                    false,
                )?;
                shaped += res.total_shaped();
                sparse += res.total_sparse();
                n += 1;
            }
        }
        Ok((shaped / n as f64, sparse / n as f64))
    }

    /// One full iteration: collect, then the scheduled gradient steps.
    pub fn run_iteration(&mut self) -> Result<IterationMetrics> {
        let (collect_shaped, collect_sparse) = self.collect_phase()?;
        let steps = self.cfg.schedule.train_steps_per_iter;
        let mut ediags = Vec::with_capacity(steps);
        let mut adiags = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (e, a) = self.train_step_once()?;
            ediags.push(e);
            adiags.push(a);
        }
        self.iter += 1;
        Ok(IterationMetrics {
            iter: self.iter,
            env_steps: self.env_steps,
            collect_shaped_return: collect_shaped,
            collect_sparse_return: collect_sparse,
            model: mean_elbo(&ediags),
            agent: mean_agent(&adiags),
            eval: None,
        })
    }

    /// Pure-execution evaluation on the held-out tasks: deterministic
    /// actions, stage-appropriate evidence, nothing stored or updated.
    pub fn evaluate(&self) -> Result<EvalSummary> {
        let trials = meta_test(
            &self.model,
            &self.agent,
            &self.store,
            &self.cfg.env,
            &self.eval_tasks,
            self.cfg.schedule.episodes_per_trial,
            self.cfg.schedule.eval_trials_per_task,
            self.evidence(),
            PolicyKind::Mean,
            self.cfg.seed,
            self.iter as u64,
        )?;
        let results: Vec<TrialResult> = trials.into_iter().map(|t| t.result).collect();
        EvalSummary::from_trials(&results)
    }
}

fn mean_elbo(ds: &[ElboDiagnostics]) -> ElboDiagnostics {
    let n = ds.len().max(1) as f64;
    ElboDiagnostics {
        loss: ds.iter().map(|d| d.loss).sum::<f64>() / n,
        recon_obs: ds.iter().map(|d| d.recon_obs).sum::<f64>() / n,
        recon_reward: ds.iter().map(|d| d.recon_reward).sum::<f64>() / n,
        kl_initial: ds.iter().map(|d| d.kl_initial).sum::<f64>() / n,
        kl_dynamics: ds.iter().map(|d| d.kl_dynamics).sum::<f64>() / n,
        num_sequences: ds.last().map_or(0, |d| d.num_sequences),
    }
}

fn mean_agent(ds: &[AgentDiagnostics]) -> AgentDiagnostics {
    let n = ds.len().max(1) as f64;
    AgentDiagnostics {
        critic_loss: ds.iter().map(|d| d.critic_loss).sum::<f64>() / n,
        actor_loss: ds.iter().map(|d| d.actor_loss).sum::<f64>() / n,
        temperature_loss: ds.iter().map(|d| d.temperature_loss).sum::<f64>() / n,
        alpha: ds.iter().map(|d| d.alpha).sum::<f64>() / n,
        entropy: ds.iter().map(|d| d.entropy).sum::<f64>() / n,
    }
}

/// Drive a trainer to its configured iteration count or environment-step
/// cap, whichever bites first, firing `on_iter` after every iteration.
/// Starts from the trainer's current `iter`, so a restored trainer
/// continues where it left off.
pub fn run_loop<F>(t: &mut Trainer, on_iter: &mut F) -> Result<()>
where
    F: FnMut(&Trainer, &IterationMetrics) -> Result<()>,
{
    let total = t.cfg.schedule.num_iterations;
    let cap = t.cfg.schedule.max_env_steps;
    while t.iter < total {
        if cap > 0 && t.env_steps >= cap {
            break;
        }
        let mut m = t.run_iteration()?;
        let every = t.cfg.schedule.eval_every;
        let last = t.iter == total || (cap > 0 && t.env_steps >= cap);
        if every > 0 && (t.iter % every == 0 || last) {
            m.eval = Some(t.evaluate()?);
        }
        on_iter(t, &m)?;
    }
    Ok(())
}

/// Dense-stage meta-training from scratch: warmstart, then the full loop.
/// `on_iter` fires after every iteration (metrics writing, checkpoints).
pub fn meta_train<F>(cfg: &TrainConfig, mut on_iter: F) -> Result<Trainer>
where
    F: FnMut(&Trainer, &IterationMetrics) -> Result<()>,
{
    let mut t = Trainer::new(cfg)?;
    t.warmstart()?;
    run_loop(&mut t, &mut on_iter)?;
    Ok(t)
}

/// Sparse-stage meta-training from dense-stage parameters.
pub fn meta_train_sparse<F>(cfg: &TrainConfig, store: ParamStore, mut on_iter: F) -> Result<Trainer>
where
    F: FnMut(&Trainer, &IterationMetrics) -> Result<()>,
{
    let mut t = Trainer::from_store(cfg, store, Stage::Sparse)?;
    t.seed_stage_buffers()?;
    run_loop(&mut t, &mut on_iter)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, TaskFamily};

    /// A seconds-scale veltrack configuration.
    fn tiny_cfg() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.seed = 0;
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
        c.model.lr = 1e-3;
        c.agent.hidden = vec![16];
        c.schedule.episodes_per_trial = 2;
        c.schedule.num_iterations = 2;
        c.schedule.collect_tasks_per_iter = 2;
        c.schedule.rollouts_per_task = 1;
        c.schedule.train_steps_per_iter = 2;
        c.schedule.tasks_per_update = 2;
        c.schedule.model_batch_size = 24;
        c.schedule.agent_batch_size = 8;
        c.schedule.warmstart_trajectories = 3;
        c.schedule.warmstart_model_steps = 2;
        c.schedule.buffer_capacity = 200;
        c.schedule.eval_every = 1;
        c.schedule.eval_trials_per_task = 1;
        c.schedule.checkpoint_every = 0;
        c
    }

    #[test]
    fn new_trainer_is_deterministic_and_holds_out_eval_tasks() {
        let cfg = tiny_cfg();
        let a = Trainer::new(&cfg).unwrap();
        let b = Trainer::new(&cfg).unwrap();
        assert_eq!(a.store.flatten(), b.store.flatten());
        assert_eq!(a.train_tasks.len(), 3);
        assert_eq!(a.eval_tasks.len(), 2);
        let train_ids: Vec<u64> = a.train_tasks.iter().map(|t| t.id).collect();
        let eval_ids: Vec<u64> = a.eval_tasks.iter().map(|t| t.id).collect();
        assert_eq!(train_ids, vec![0, 1, 2]);
        assert_eq!(eval_ids, vec![3, 4]);
        // Held-out parameters differ from every training task's.
        for e in &a.eval_tasks {
            assert!(a.train_tasks.iter().all(|t| t.params != e.params));
        }
    }

    #[test]
    fn warmstart_fills_buffers_and_counts_env_steps() {
        let cfg = tiny_cfg();
        let mut t = Trainer::new(&cfg).unwrap();
        t.warmstart().unwrap();
        assert_eq!(t.buffers.total_trials(), 3);
        // 3 trials × 2 episodes × 5 steps of a horizon-6 episode.
        assert_eq!(t.env_steps, 30);
        assert_eq!(t.opt_model.t, 2);
        assert!(t.initial_loss.is_some());
        // Model pretraining must not touch the agent's optimizers.
        assert_eq!(t.opt_actor.t, 0);
        assert_eq!(t.opt_critic.t, 0);
    }

    #[test]
    fn iteration_produces_finite_metrics_and_grows_buffers() {
        let cfg = tiny_cfg();
        let mut t = Trainer::new(&cfg).unwrap();
        t.warmstart().unwrap();
        let m = t.run_iteration().unwrap();
        assert_eq!(m.iter, 1);
        assert_eq!(t.buffers.total_trials(), 5);
        assert_eq!(m.env_steps, 50);
        assert_eq!(m.model.num_sequences, 2);
        for v in [
            m.collect_shaped_return,
            m.collect_sparse_return,
            m.model.loss,
            m.agent.critic_loss,
            m.agent.actor_loss,
            m.agent.alpha,
            m.agent.entropy,
        ] {
            assert!(v.is_finite(), "non-finite metric: {m:?}");
        }
    }

    #[test]
    fn metric_trace_is_bit_identical_across_runs() {
        let cfg = tiny_cfg();
        let run = || {
            let mut rows = Vec::new();
            let t = meta_train(&cfg, |_, m| {
                rows.push(serde_json::to_string(m).unwrap());
                Ok(())
            })
            .unwrap();
            (rows, t.store.flatten())
        };
        let (rows1, store1) = run();
        let (rows2, store2) = run();
        assert_eq!(rows1.len(), 2);
        assert!(rows1[0].contains("\"eval\":{"), "eval cadence missing");
        assert_eq!(rows1, rows2);
        assert_eq!(store1, store2);
    }

    #[test]
    fn evaluation_is_pure_execution() {
        let cfg = tiny_cfg();
        let mut t = Trainer::new(&cfg).unwrap();
        t.warmstart().unwrap();
        t.run_iteration().unwrap();
        let before = t.store.flatten();
        let steps_before = t.env_steps;
        let trials_before = t.buffers.total_trials();
        let s1 = t.evaluate().unwrap();
        let s2 = t.evaluate().unwrap();
        assert_eq!(t.store.flatten(), before);
        assert_eq!(t.env_steps, steps_before);
        assert_eq!(t.buffers.total_trials(), trials_before);
        assert_eq!(s1, s2);
        assert_eq!(s1.num_trials, 2);
        assert_eq!(s1.episodes_per_trial, 2);
    }

    #[test]
    fn eval_cadence_does_not_perturb_the_training_trace() {
        let mut with_eval = tiny_cfg();
        with_eval.schedule.eval_every = 1;
        let mut without = tiny_cfg();
        without.schedule.eval_every = 0;
        let run = |cfg: &TrainConfig| {
            let mut rows = Vec::new();
            meta_train(cfg, |_, m| {
                let mut m = m.clone();
                m.eval = None; // compare the training fields only
                rows.push(serde_json::to_string(&m).unwrap());
                Ok(())
            })
            .unwrap();
            rows
        };
        assert_eq!(run(&with_eval), run(&without));
    }

    #[test]
    fn divergence_guard_aborts_with_exit_code_3() {
        let cfg = tiny_cfg();
        let mut t = Trainer::new(&cfg).unwrap();
        t.warmstart().unwrap();
        // Pretend the run started from a microscopic loss; the next real
        // loss then exceeds 10·|init| + 1.
        t.initial_loss = Some(1e-12);
        let err = t.train_step_once().unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn sparse_stage_seeds_buffers_and_trains_on_the_mix() {
        let mut dense_cfg = tiny_cfg();
        dense_cfg.schedule.num_iterations = 1;
        let dense = meta_train(&dense_cfg, |_, _| Ok(())).unwrap();

        let mut sparse_cfg = tiny_cfg();
        sparse_cfg.schedule.num_iterations = 1;
        sparse_cfg.sparse.seed_trials_per_task = 2;
        sparse_cfg.sparse.stage1_mix = 0.5;
        let t = meta_train_sparse(&sparse_cfg, dense.store.clone(), |_, m| {
            assert!(m.model.loss.is_finite());
            Ok(())
        })
        .unwrap();
        assert_eq!(t.stage, Stage::Sparse);
        assert_eq!(t.evidence(), RewardMode::Sparse);
        let seeded = t.seed_buffers.as_ref().unwrap();
        assert_eq!(seeded.total_trials(), 6);
        // Fresh sparse-stage collection landed in the main buffers.
        assert_eq!(t.buffers.total_trials(), 2);
        // Parameters moved away from the dense-stage starting point.
        assert_ne!(t.store.flatten(), dense.store.flatten());
    }

    #[test]
    fn from_store_rejects_architecture_mismatches() {
        let dense = Trainer::new(&tiny_cfg()).unwrap();
        let mut other = tiny_cfg();
        other.model.latent_dim = 4;
        let err = match Trainer::from_store(&other, dense.store.clone(), Stage::Sparse) {
            Err(e) => e,
            Ok(_) => panic!("mismatched architecture must be rejected"),
        };
        assert!(matches!(err, Error::CheckpointMismatch(_)), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn env_step_cap_short_circuits_the_loop() {
        let mut cfg = tiny_cfg();
        cfg.schedule.num_iterations = 50;
        cfg.schedule.max_env_steps = 35; // warmstart (30) + one iteration
        let mut iters = 0;
        let t = meta_train(&cfg, |_, _| {
            iters += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(iters, 1);
        assert_eq!(t.iter, 1);
        assert!(t.env_steps >= 35);
    }

    #[test]
    fn decoupled_agent_batch_still_trains() {
        let mut cfg = tiny_cfg();
        cfg.schedule.decouple_agent_batch = true;
        cfg.schedule.num_iterations = 1;
        let t = meta_train(&cfg, |_, m| {
            assert!(m.agent.critic_loss.is_finite());
            Ok(())
        })
        .unwrap();
        assert_eq!(t.iter, 1);
    }
}
