//! Meta-testing and the evaluation metrics built on it.
//!
//! Meta-testing is pure execution: reset the belief, act, filter — no
//! parameter updates, no replay storage. On top of the per-trial results
//! this module derives two study-specific measurements: time to re-acquire
//! a switching target (nonstationary tracking) and semicircle arc
//! coverage (how much of the goal ring an episode's pre-success path
//! explored, against a go-straight-to-one-random-goal reference).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::SacAgent;
use crate::envs::pointnav::{goal_position, GOAL_RADIUS, STEP_SCALE};
use crate::envs::veltrack::VelTrack;
use crate::envs::{make_env, EnvConfig, RewardMode, Task, TaskFamily};
use crate::error::{Error, Result};
use crate::latent::LatentModel;
use crate::meta::buffer::Trajectory;
use crate::meta::rollout::{collect_trial, PolicyKind, TrialResult};
use crate::nn::ParamStore;
use crate::rng::{stream, substream};

/// One meta-test trial: the raw trajectory plus its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTrial {
    pub rep: usize,
    pub trajectory: Trajectory,
    pub result: TrialResult,
}

/// Run (tasks × reps) trials without touching parameters or buffers.
/// Results are task-major, rep-minor. `label` keeps noise streams of
/// different evaluation rounds (e.g. per training iteration) apart.
#[allow(clippy::too_many_arguments)]
pub fn meta_test(
    model: &LatentModel,
    agent: &SacAgent,
    store: &ParamStore,
    env_cfg: &EnvConfig,
    tasks: &[Task],
    episodes: usize,
    reps: usize,
    evidence: RewardMode,
    policy: PolicyKind,
    seed: u64,
    label: u64,
) -> Result<Vec<EvalTrial>> {
    if tasks.is_empty() || reps == 0 {
        return Err(Error::Usage("meta_test: no tasks or zero reps".into()));
    }
    let mut out = Vec::with_capacity(tasks.len() * reps);
    for task in tasks {
        let mut env = make_env(env_cfg, task, evidence)?;
        for rep in 0..reps {
            let mut rng = substream(seed, &format!("rollout/eval/{label}/{}", task.id), rep as u64);
            let env_seed = rng.gen::<u64>();
            let (trajectory, result) = collect_trial(
                model,
                agent,
                store,
                env.as_mut(),
                episodes,
                evidence,
                policy,
                env_seed,
                &mut rng,
            )?;
            out.push(EvalTrial {
                rep,
                trajectory,
                result,
            });
        }
    }
    Ok(out)
}

/// Reward-decoder diagnostic over one trajectory: re-filter with zero
/// latent noise (so each step's sample sits at the posterior mean) and
/// decode the predicted reward (mean, variance) at every record. A model
/// that has identified the task shows the variance collapsing once the
/// evidence pins it down.
pub fn reward_decoder_trace(
    model: &LatentModel,
    store: &ParamStore,
    traj: &Trajectory,
    evidence: RewardMode,
) -> Result<Vec<(f64, f64)>> {
    let zeros = vec![0.0; model.latent_dim()];
    let acts = traj.model_actions();
    let mut belief = model.infer_initial(store, &traj.obs[0], traj.reward(evidence, 0), &zeros)?;
    let mut out = Vec::with_capacity(traj.len());
    out.push(model.reward_prediction(store, &belief.sample));
    for t in 1..traj.len() {
        belief = model.infer_step(
            store,
            &belief,
            &traj.obs[t],
            traj.reward(evidence, t),
            &acts[t - 1],
            &zeros,
        )?;
        out.push(model.reward_prediction(store, &belief.sample));
    }
    Ok(out)
}

/// Evaluation trials collapsed into per-episode-index means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub num_trials: usize,
    pub episodes_per_trial: usize,
    /// Mean shaped return at each episode index.
    pub ep_shaped: Vec<f64>,
    /// Mean sparse return at each episode index.
    pub ep_sparse: Vec<f64>,
    /// Success rate at each episode index.
    pub ep_success: Vec<f64>,
    /// Mean per-trial totals.
    pub mean_shaped: f64,
    pub mean_sparse: f64,
}

impl EvalSummary {
    pub fn from_trials(trials: &[TrialResult]) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Usage("EvalSummary: no trials".into()));
        }
        let e = trials[0].episodes.len();
        if trials.iter().any(|t| t.episodes.len() != e) {
            return Err(Error::Usage(
                "EvalSummary: trials disagree on episode count".into(),
            ));
        }
        let n = trials.len() as f64;
        let mut s = EvalSummary {
            num_trials: trials.len(),
            episodes_per_trial: e,
            ep_shaped: vec![0.0; e],
            ep_sparse: vec![0.0; e],
            ep_success: vec![0.0; e],
            mean_shaped: 0.0,
            mean_sparse: 0.0,
        };
        for t in trials {
            s.mean_shaped += t.total_shaped() / n;
            s.mean_sparse += t.total_sparse() / n;
            for (i, ep) in t.episodes.iter().enumerate() {
                s.ep_shaped[i] += ep.shaped_return / n;
                s.ep_sparse[i] += ep.sparse_return / n;
                if ep.success {
                    s.ep_success[i] += 1.0 / n;
                }
            }
        }
        Ok(s)
    }
}

/// Steps needed to enter the success band after each target switch.
///
/// `success` is per record (0-based storage of 1-based records);
/// `switches` are the 1-based record numbers where a new target takes
/// over. The search for switch i is bounded by switch i+1 (or the end),
/// and the count is `record − switch` — 0 when the trajectory is already
/// in band at the first record the new target governs.
pub fn steps_to_band(success: &[bool], switches: &[usize]) -> Vec<Option<usize>> {
    let horizon = success.len();
    switches
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let end = switches.get(i + 1).copied().unwrap_or(horizon + 1);
            (s..end.min(horizon + 1))
                .find(|&r| success[r - 1])
                .map(|r| r - s)
        })
        .collect()
}

/// One evaluated nonstationary episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonstatEpisode {
    pub task_id: u64,
    pub rep: usize,
    /// Per switch: steps to re-enter the band, None if never.
    pub steps_to_band: Vec<Option<usize>>,
}

/// Re-acquisition statistics over many single-episode runs on
/// switching-target tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonstatReport {
    pub threshold: usize,
    pub episodes: Vec<NonstatEpisode>,
}

impl NonstatReport {
    /// Fraction of episodes whose every switch was re-acquired within the
    /// threshold.
    pub fn fraction_reacquired(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        let good = self
            .episodes
            .iter()
            .filter(|e| {
                !e.steps_to_band.is_empty()
                    && e.steps_to_band
                        .iter()
                        .all(|s| s.is_some_and(|k| k <= self.threshold))
            })
            .count();
        good as f64 / self.episodes.len() as f64
    }

    /// Mean steps-to-band over all re-acquired switches.
    pub fn mean_steps(&self) -> f64 {
        let all: Vec<usize> = self
            .episodes
            .iter()
            .flat_map(|e| e.steps_to_band.iter().flatten().copied())
            .collect();
        if all.is_empty() {
            return f64::NAN;
        }
        all.iter().sum::<usize>() as f64 / all.len() as f64
    }
}

/// Evaluate target re-acquisition on switching-target velocity tasks:
/// single episodes, deterministic actions, belief filtered continuously
/// through the switches.
#[allow(clippy::too_many_arguments)]
pub fn nonstationary_eval(
    model: &LatentModel,
    agent: &SacAgent,
    store: &ParamStore,
    env_cfg: &EnvConfig,
    tasks: &[Task],
    reps: usize,
    threshold: usize,
    evidence: RewardMode,
    seed: u64,
) -> Result<NonstatReport> {
    if env_cfg.family != TaskFamily::VelTrack || env_cfg.veltrack_targets < 2 {
        return Err(Error::Usage(
            "nonstationary_eval needs veltrack with ≥ 2 targets per task".into(),
        ));
    }
    let horizon = env_cfg.horizon_for_family();
    let mut episodes = Vec::with_capacity(tasks.len() * reps);
    for task in tasks {
        let switches = VelTrack::new(task.clone(), horizon, evidence).switch_steps();
        let mut env = make_env(env_cfg, task, evidence)?;
        for rep in 0..reps {
            let mut rng = substream(seed, &format!("rollout/nonstat/{}", task.id), rep as u64);
            let env_seed = rng.gen::<u64>();
            let (traj, _) = collect_trial(
                model,
                agent,
                store,
                env.as_mut(),
                1,
                evidence,
                PolicyKind::Mean,
                env_seed,
                &mut rng,
            )?;
            episodes.push(NonstatEpisode {
                task_id: task.id,
                rep,
                steps_to_band: steps_to_band(&traj.success, &switches),
            });
        }
    }
    Ok(NonstatReport {
        threshold,
        episodes,
    })
}

/// Fraction of goal-ring bins a path visited: bin b's probe goal sits at
/// angle π(b + ½)/bins on the ring, and counts as covered when any path
/// point comes within the success radius of it.
pub fn arc_coverage(positions: &[(f64, f64)], bins: usize) -> f64 {
    if bins == 0 || positions.is_empty() {
        return 0.0;
    }
    let covered = (0..bins)
        .filter(|&b| {
            let theta = std::f64::consts::PI * (b as f64 + 0.5) / bins as f64;
            let (gx, gy) = goal_position(theta);
            positions
                .iter()
                .any(|&(x, y)| ((x - gx).powi(2) + (y - gy).powi(2)).sqrt() <= GOAL_RADIUS)
        })
        .count();
    covered as f64 / bins as f64
}

/// Agent positions of one episode of a trial, truncated at (and
/// including) the first successful record — the pre-success search path.
pub fn presuccess_positions(traj: &Trajectory, episode: usize, horizon: usize) -> Vec<(f64, f64)> {
    let start = episode * horizon;
    let end = (start + horizon).min(traj.len());
    let mut out = Vec::new();
    for idx in start..end {
        if traj.states[idx].len() >= 2 {
            out.push((traj.states[idx][0], traj.states[idx][1]));
        }
        if traj.success[idx] {
            break;
        }
    }
    out
}

/// Mean coverage of the no-search reference policy: pick one goal angle
/// uniformly at random and walk straight at it at full step scale,
/// stopping once inside the success radius (the same truncation rule the
/// agent's paths get).
pub fn straight_to_goal_baseline(bins: usize, steps: usize, reps: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, "coverage-baseline");
    let mut total = 0.0;
    for _ in 0..reps {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (gx, gy) = goal_position(theta);
        let (mut x, mut y) = (0.0, 0.0);
        let mut path = Vec::with_capacity(steps);
        for _ in 0..steps {
            x += STEP_SCALE * theta.cos();
            y += STEP_SCALE * theta.sin();
            path.push((x, y));
            if ((x - gx).powi(2) + (y - gy).powi(2)).sqrt() <= GOAL_RADIUS {
                break;
            }
        }
        total += arc_coverage(&path, bins);
    }
    total / reps as f64
}
