//! Trial collection: belief-conditioned acting over multi-episode trials.
//!
//! A trial is a fixed number of episodes on one task. The environment
//! resets between episodes but the belief does not — the filtered latent
//! carries everything learned about the task into the next episode. The
//! reset is announced to the model through a zero action row whose
//! trailing boundary flag is 1, so the latent dynamics can learn what a
//! reset does to the state while task information survives.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agent::SacAgent;
use crate::envs::{Environment, RewardMode};
use crate::error::{Error, Result};
use crate::latent::{BeliefState, LatentModel};
use crate::meta::buffer::Trajectory;
use crate::nn::ParamStore;
use crate::rng::Rng;

/// How actions are chosen during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Sample from the squashed policy (training-time collection).
    Stochastic,
    /// Deterministic tanh(mean) action (evaluation).
    Mean,
    /// Uniform actions in [−1, 1]^d (warmstart data).
    Random,
}

/// Per-episode outcome summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub shaped_return: f64,
    pub sparse_return: f64,
    /// Completion predicate held on at least one step.
    pub success: bool,
    /// 1-based step index of the first successful step, if any.
    pub first_success: Option<usize>,
}

/// Outcome of one trial (all episodes, in order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub task_id: u64,
    pub episodes: Vec<EpisodeStats>,
}

impl TrialResult {
    pub fn total_shaped(&self) -> f64 {
        self.episodes.iter().map(|e| e.shaped_return).sum()
    }

    pub fn total_sparse(&self) -> f64 {
        self.episodes.iter().map(|e| e.sparse_return).sum()
    }
}

fn standard_normal_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Run one trial and return the stored trajectory plus its outcome.
///
/// `evidence` picks the reward channel fed to the posterior while acting;
/// both channels are recorded either way. Episode `e` resets the
/// environment with seed `env_seed + e`. All noise — belief
/// reparameterization and action sampling — comes from `rng`, so the
/// rollout is a pure function of (parameters, task, env_seed, rng state).
#[allow(clippy::too_many_arguments)]
pub fn collect_trial(
    model: &LatentModel,
    agent: &SacAgent,
    store: &ParamStore,
    env: &mut dyn Environment,
    episodes: usize,
    evidence: RewardMode,
    policy: PolicyKind,
    env_seed: u64,
    rng: &mut Rng,
) -> Result<(Trajectory, TrialResult)> {
    if episodes == 0 {
        return Err(Error::Usage("collect_trial: episodes must be ≥ 1".into()));
    }
    let d = env.action_dim();
    if model.action_dim != d + 1 {
        return Err(Error::Usage(format!(
            "latent model action input is {} wide; environment needs {} (+1 boundary flag)",
            model.action_dim,
            d + 1
        )));
    }
    if agent.action_dim != d {
        return Err(Error::Usage(format!(
            "agent action dim {} does not match environment dim {d}",
            agent.action_dim
        )));
    }
    if agent.feat_dim != BeliefState::feature_dim(model.latent_dim()) {
        return Err(Error::Usage(format!(
            "agent feature dim {} does not match belief feature dim {}",
            agent.feat_dim,
            BeliefState::feature_dim(model.latent_dim())
        )));
    }

    let latent = model.latent_dim();
    let mut traj = Trajectory {
        task_id: env.task().id,
        obs: Vec::new(),
        shaped: Vec::new(),
        sparse: Vec::new(),
        actions: Vec::new(),
        boundary: Vec::new(),
        success: Vec::new(),
        states: Vec::new(),
    };
    let mut result = TrialResult {
        task_id: env.task().id,
        episodes: Vec::with_capacity(episodes),
    };
    let mut belief: Option<BeliefState> = None;

    for ep in 0..episodes {
        let obs = env.reset(env_seed.wrapping_add(ep as u64));
        let eps = standard_normal_vec(latent, rng);
        belief = Some(match belief.take() {
            // First reset: posterior from the observation alone.
            None => model.infer_initial(store, &obs, 0.0, &eps)?,
            // Later resets: the belief flows through, conditioned on a
            // zero action with the boundary flag raised.
            Some(prev) => {
                traj.actions.push(vec![0.0; d]);
                traj.boundary.push(true);
                let mut a_in = vec![0.0; d + 1];
                a_in[d] = 1.0;
                model.infer_step(store, &prev, &obs, 0.0, &a_in, &eps)?
            }
        });
        traj.obs.push(obs);
        traj.shaped.push(0.0);
        traj.sparse.push(0.0);
        traj.success.push(false);
        traj.states.push(Vec::new());

        let mut stats = EpisodeStats {
            shaped_return: 0.0,
            sparse_return: 0.0,
            success: false,
            first_success: None,
        };
        let mut step = 0usize;
        loop {
            let b = belief.take().expect("belief set at reset");
            let action = match policy {
                PolicyKind::Stochastic => agent.act(store, &b.feature(), rng)?,
                PolicyKind::Mean => agent.act_mean(store, &b.feature())?,
                PolicyKind::Random => (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let sr = env.step(&action)?;
            step += 1;
            stats.shaped_return += sr.shaped_reward;
            stats.sparse_return += sr.sparse_reward;
            if sr.info.success {
                stats.success = true;
                stats.first_success.get_or_insert(step);
            }

            let evid = match evidence {
                RewardMode::Shaped => sr.shaped_reward,
                RewardMode::Sparse => sr.sparse_reward,
            };
            let mut a_in = action.clone();
            a_in.push(0.0);
            let eps = standard_normal_vec(latent, rng);
            let next = model.infer_step(store, &b, &sr.obs, evid, &a_in, &eps)?;

            traj.actions.push(action);
            traj.boundary.push(false);
            traj.obs.push(sr.obs);
            traj.shaped.push(sr.shaped_reward);
            traj.sparse.push(sr.sparse_reward);
            traj.success.push(sr.info.success);
            traj.states.push(sr.info.state);
            belief = Some(next);
            if sr.done {
                break;
            }
        }
        result.episodes.push(stats);
    }
    debug_assert!(traj.validate().is_ok());
    Ok((traj, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::SacConfig;
    use crate::envs::{make_env, EnvConfig, ObsSpec, Task, TaskFamily};
    use crate::latent::ModelArch;
    use crate::rng::stream;

    fn veltrack_cfg(horizon: usize) -> EnvConfig {
        EnvConfig {
            family: TaskFamily::VelTrack,
            horizon,
            ..EnvConfig::default()
        }
    }

    fn veltrack_task(target: f64) -> Task {
        Task {
            family: TaskFamily::VelTrack,
            id: 0,
            params: vec![1.0, target],
        }
    }

    /// Small random-weight model + agent over a proprio observation.
    fn tiny_setup(obs: ObsSpec, action_dim: usize, seed: u64) -> (LatentModel, SacAgent, ParamStore) {
        let arch = ModelArch {
            latent_dim: 3,
            feat_dim: 4,
            hidden: vec![8],
            ..ModelArch::default()
        };
        let model = LatentModel::new(arch, obs, action_dim + 1);
        let agent = SacAgent::new(
            SacConfig {
                hidden: vec![8],
                ..SacConfig::default()
            },
            BeliefState::feature_dim(3),
            action_dim,
        );
        let mut store = ParamStore::new();
        model.init(&mut store, &mut stream(seed, "init/model"));
        agent.init(&mut store, &mut stream(seed, "init/agent"));
        (model, agent, store)
    }

    #[test]
    fn trial_shape_and_boundary_placement() {
        let cfg = veltrack_cfg(6);
        let (model, agent, store) = tiny_setup(ObsSpec::Proprio { d: 1 }, 1, 0);
        let mut env = make_env(&cfg, &veltrack_task(0.3), RewardMode::Shaped).unwrap();
        let mut rng = stream(0, "rollout-test");
        let (traj, result) = collect_trial(
            &model,
            &agent,
            &store,
            env.as_mut(),
            2,
            RewardMode::Shaped,
            PolicyKind::Stochastic,
            100,
            &mut rng,
        )
        .unwrap();
        // 2 episodes × 6 records, one shared boundary action row.
        assert_eq!(traj.len(), 12);
        assert_eq!(traj.num_steps(), 11);
        assert_eq!(traj.env_steps(), 10);
        let marks: Vec<usize> = (0..11).filter(|&i| traj.boundary[i]).collect();
        assert_eq!(marks, vec![5]);
        assert_eq!(traj.actions[5], vec![0.0]);
        assert_eq!(traj.model_actions()[5], vec![0.0, 1.0]);
        // Reset records carry zero rewards on both channels.
        assert_eq!(traj.shaped[0], 0.0);
        assert_eq!(traj.shaped[6], 0.0);
        assert_eq!(traj.sparse[6], 0.0);
        assert_eq!(result.episodes.len(), 2);
        traj.validate().unwrap();
    }

    #[test]
    fn rollout_is_deterministic_per_stream() {
        let cfg = veltrack_cfg(8);
        let (model, agent, store) = tiny_setup(ObsSpec::Proprio { d: 1 }, 1, 1);
        let run = |seed: u64| {
            let mut env = make_env(&cfg, &veltrack_task(-0.4), RewardMode::Shaped).unwrap();
            let mut rng = stream(seed, "rollout-test");
            collect_trial(
                &model,
                &agent,
                &store,
                env.as_mut(),
                2,
                RewardMode::Shaped,
                PolicyKind::Stochastic,
                7,
                &mut rng,
            )
            .unwrap()
        };
        let (t1, r1) = run(5);
        let (t2, r2) = run(5);
        assert_eq!(t1, t2);
        assert_eq!(r1, r2);
        let (t3, _) = run(6);
        assert_ne!(t1, t3);
    }

    #[test]
    fn random_policy_stays_in_the_action_box() {
        let cfg = veltrack_cfg(10);
        let (model, agent, store) = tiny_setup(ObsSpec::Proprio { d: 1 }, 1, 2);
        let mut env = make_env(&cfg, &veltrack_task(0.1), RewardMode::Shaped).unwrap();
        let mut rng = stream(3, "rollout-test");
        let (traj, _) = collect_trial(
            &model,
            &agent,
            &store,
            env.as_mut(),
            1,
            RewardMode::Shaped,
            PolicyKind::Random,
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(traj.len(), 10);
        for a in &traj.actions {
            assert!(a[0].abs() <= 1.0);
        }
    }

    #[test]
    fn evidence_channel_steers_the_acting_policy() {
        // Same noise stream, different evidence channel → different
        // beliefs → different sampled actions after the first step.
        let cfg = veltrack_cfg(8);
        let (model, agent, store) = tiny_setup(ObsSpec::Proprio { d: 1 }, 1, 3);
        let run = |evidence: RewardMode| {
            let mut env = make_env(&cfg, &veltrack_task(0.6), evidence).unwrap();
            let mut rng = stream(11, "rollout-test");
            collect_trial(
                &model,
                &agent,
                &store,
                env.as_mut(),
                1,
                evidence,
                PolicyKind::Stochastic,
                0,
                &mut rng,
            )
            .unwrap()
            .0
        };
        let shaped = run(RewardMode::Shaped);
        let sparse = run(RewardMode::Sparse);
        assert_ne!(shaped.actions, sparse.actions);
        // The stored channels themselves are rollout-independent fields.
        assert_eq!(shaped.actions[0], sparse.actions[0]);
    }

    #[test]
    fn success_bookkeeping_on_an_always_in_band_run() {
        // Zero the actor head → mean action 0 → velocity stays 0, which is
        // inside the band of a zero-target task at every step.
        let cfg = veltrack_cfg(6);
        let (model, agent, mut store) = tiny_setup(ObsSpec::Proprio { d: 1 }, 1, 4);
        for name in ["actor.h.w", "actor.h.b"] {
            let z = ndarray::Array2::zeros(store.get(name).dim());
            store.set(name, z);
        }
        let mut env = make_env(&cfg, &veltrack_task(0.0), RewardMode::Shaped).unwrap();
        let mut rng = stream(5, "rollout-test");
        let (traj, result) = collect_trial(
            &model,
            &agent,
            &store,
            env.as_mut(),
            2,
            RewardMode::Shaped,
            PolicyKind::Mean,
            0,
            &mut rng,
        )
        .unwrap();
        for ep in &result.episodes {
            assert!(ep.success);
            assert_eq!(ep.first_success, Some(1));
            assert_eq!(ep.sparse_return, 5.0);
            assert_eq!(ep.shaped_return, 0.0);
        }
        assert_eq!(traj.success.iter().filter(|&&s| s).count(), 10);
    }

    #[test]
    fn trial_totals_match_trajectory_sums() {
        let cfg = veltrack_cfg(7);
        let (model, agent, store) = tiny_setup(ObsSpec::Proprio { d: 1 }, 1, 6);
        let mut env = make_env(&cfg, &veltrack_task(0.5), RewardMode::Shaped).unwrap();
        let mut rng = stream(9, "rollout-test");
        let (traj, result) = collect_trial(
            &model,
            &agent,
            &store,
            env.as_mut(),
            3,
            RewardMode::Shaped,
            PolicyKind::Stochastic,
            50,
            &mut rng,
        )
        .unwrap();
        let shaped_sum: f64 = traj.shaped.iter().sum();
        let sparse_sum: f64 = traj.sparse.iter().sum();
        assert!((result.total_shaped() - shaped_sum).abs() < 1e-12);
        assert!((result.total_sparse() - sparse_sum).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatches_are_usage_errors() {
        let cfg = veltrack_cfg(6);
        // Model built for a 2-wide action input cannot drive veltrack (needs 1+1).
        let (model, agent, store) = tiny_setup(ObsSpec::Proprio { d: 1 }, 2, 7);
        let mut env = make_env(&cfg, &veltrack_task(0.0), RewardMode::Shaped).unwrap();
        let mut rng = stream(0, "rollout-test");
        let err = collect_trial(
            &model,
            &agent,
            &store,
            env.as_mut(),
            1,
            RewardMode::Shaped,
            PolicyKind::Stochastic,
            0,
            &mut rng,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn pixel_family_rollout_round_trips() {
        // End-to-end through the conv encoder at a small image size.
        let cfg = EnvConfig {
            family: TaskFamily::PointNav2d,
            image_size: 16,
            horizon: 5,
            ..EnvConfig::default()
        };
        let arch = ModelArch {
            latent_dim: 3,
            feat_dim: 4,
            hidden: vec![8],
            conv_channels: vec![2, 2],
            ..ModelArch::default()
        };
        let model = LatentModel::new(arch, ObsSpec::Pixels { h: 16, w: 16, c: 1 }, 3);
        let agent = SacAgent::new(
            SacConfig {
                hidden: vec![8],
                ..SacConfig::default()
            },
            BeliefState::feature_dim(3),
            2,
        );
        let mut store = ParamStore::new();
        model.init(&mut store, &mut stream(0, "init/model"));
        agent.init(&mut store, &mut stream(0, "init/agent"));
        let task = crate::envs::sample_tasks(&cfg, 1, 0).unwrap().remove(0);
        let mut env = make_env(&cfg, &task, RewardMode::Shaped).unwrap();
        let mut rng = stream(1, "rollout-test");
        let (traj, _) = collect_trial(
            &model,
            &agent,
            &store,
            env.as_mut(),
            2,
            RewardMode::Shaped,
            PolicyKind::Stochastic,
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(traj.len(), 10);
        assert_eq!(traj.obs[0].len(), 256);
        assert_eq!(traj.actions[0].len(), 2);
    }
}
