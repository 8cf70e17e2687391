//! Task-distribution environments.
//!
//! Four families, all fixed-horizon POMDPs over continuous actions in
//! [−1, 1]^d:
//!
//! - `pointnav2d`: 2-D navigation to a hidden goal on a semicircle,
//!   grayscale pixel observations, the goal is never rendered.
//! - `buttonpanel`: a row of identical-looking buttons at a per-task panel
//!   offset; exactly one is correct.
//! - `veltrack`: scalar velocity tracking with hidden (and optionally
//!   switching) target velocities, proprioceptive observations.
//! - `lgss-diagnostic`: a linear-Gaussian system whose exact posterior is
//!   computable by the Kalman oracle — the inference testbed.
//!
//! Task identity is observable only through rewards: two tasks with the
//! same agent trajectory produce identical observations in the sparse
//! families.

pub mod buttons;
pub mod lgss;
pub mod pointnav;
pub mod render;
pub mod veltrack;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flattened observation: pixels are channels-last rows in [0,1],
/// proprioceptive vectors are raw values.
pub type Observation = Vec<f64>;

/// Environment family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    #[serde(rename = "pointnav2d")]
    PointNav2d,
    #[serde(rename = "buttonpanel")]
    ButtonPanel,
    #[serde(rename = "veltrack")]
    VelTrack,
    #[serde(rename = "lgss-diagnostic")]
    LgssDiagnostic,
}

impl std::fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskFamily::PointNav2d => "pointnav2d",
            TaskFamily::ButtonPanel => "buttonpanel",
            TaskFamily::VelTrack => "veltrack",
            TaskFamily::LgssDiagnostic => "lgss-diagnostic",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointnav2d" => Ok(TaskFamily::PointNav2d),
            "buttonpanel" => Ok(TaskFamily::ButtonPanel),
            "veltrack" => Ok(TaskFamily::VelTrack),
            "lgss-diagnostic" => Ok(TaskFamily::LgssDiagnostic),
            other => Err(Error::Config(format!(
                "unknown environment family `{other}` (expected pointnav2d, buttonpanel, veltrack, lgss-diagnostic)"
            ))),
        }
    }
}

/// One sampled task. `params` encodes the family-specific hidden
/// parameters; `id` indexes the per-task replay buffer and appears in logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub family: TaskFamily,
    pub id: u64,
    pub params: Vec<f64>,
}

/// Which reward channel feeds the `reward` field of [`StepResult`]:
/// shaped during meta-training, sparse at meta-test for sparse families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Shaped,
    Sparse,
}

/// Per-step diagnostics. Never fed to the agent.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StepInfo {
    /// True underlying state (agent position / velocity / latent).
    pub state: Vec<f64>,
    /// Distance to goal (or |v − v*|) where the family defines one.
    pub dist: f64,
    /// Task-completion predicate at this step.
    pub success: bool,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: Observation,
    /// Active-channel reward (see [`RewardMode`]).
    pub reward: f64,
    /// Dense distance-based channel, always computed where defined.
    pub shaped_reward: f64,
    /// Binary completion channel (1.0 iff the predicate holds this step).
    pub sparse_reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Observation geometry, needed to pick encoder architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsSpec {
    /// h × w × c pixels, flattened channels-last.
    Pixels { h: usize, w: usize, c: usize },
    /// Plain vector of the given length.
    Proprio { d: usize },
}

impl ObsSpec {
    pub fn len(&self) -> usize {
        match *self {
            ObsSpec::Pixels { h, w, c } => h * w * c,
            ObsSpec::Proprio { d } => d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A single sequential episode driver: reset, then exactly horizon−1 steps.
pub trait Environment {
    fn obs_spec(&self) -> ObsSpec;
    fn action_dim(&self) -> usize;
    /// Episode length in records: reset emits record 1, each step one more,
    /// `done` turns true at record `horizon()`.
    fn horizon(&self) -> usize;
    fn task(&self) -> &Task;
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

/// Environment-construction knobs shared by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub family: TaskFamily,
    /// Image side length for pixel families.
    pub image_size: usize,
    /// Records per episode; 0 = family default (40, or 50 for veltrack).
    pub horizon: usize,
    /// Number of target velocities per veltrack task (m ≥ 1).
    pub veltrack_targets: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            family: TaskFamily::PointNav2d,
            image_size: 32,
            horizon: 0,
            veltrack_targets: 1,
        }
    }
}

impl EnvConfig {
    pub fn horizon_for_family(&self) -> usize {
        if self.horizon > 0 {
            return self.horizon;
        }
        match self.family {
            TaskFamily::VelTrack => 50,
            _ => 40,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.family, TaskFamily::PointNav2d | TaskFamily::ButtonPanel)
            && self.image_size < 8
        {
            return Err(Error::Config(format!(
                "env.image_size = {} too small (min 8)",
                self.image_size
            )));
        }
        if self.veltrack_targets == 0 {
            return Err(Error::Config("env.veltrack_targets must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Draw `n` tasks uniformly over the family's parameter ranges,
/// deterministic under (family, seed).
pub fn sample_tasks(cfg: &EnvConfig, n: usize, seed: u64) -> Result<Vec<Task>> {
    if n == 0 {
        return Err(Error::Usage("sample_tasks: n must be ≥ 1".into()));
    }
    let mut rng = crate::rng::stream(seed, &format!("tasks/{}", cfg.family));
    let horizon = cfg.horizon_for_family();
    Ok((0..n as u64)
        .map(|id| match cfg.family {
            TaskFamily::PointNav2d => pointnav::sample_task(id, &mut rng),
            TaskFamily::ButtonPanel => buttons::sample_task(id, &mut rng),
            TaskFamily::VelTrack => {
                veltrack::sample_task(id, cfg.veltrack_targets, horizon, &mut rng)
            }
            TaskFamily::LgssDiagnostic => lgss::sample_task(id, &mut rng),
        })
        .collect())
}

/// Instantiate the environment for one task.
pub fn make_env(cfg: &EnvConfig, task: &Task, mode: RewardMode) -> Result<Box<dyn Environment>> {
    if task.family != cfg.family {
        return Err(Error::Usage(format!(
            "task family {} does not match env config family {}",
            task.family, cfg.family
        )));
    }
    let horizon = cfg.horizon_for_family();
    Ok(match cfg.family {
        TaskFamily::PointNav2d => Box::new(pointnav::PointNav::new(
            task.clone(),
            cfg.image_size,
            horizon,
            mode,
        )),
        TaskFamily::ButtonPanel => Box::new(buttons::ButtonPanel::new(
            task.clone(),
            cfg.image_size,
            horizon,
            mode,
        )),
        TaskFamily::VelTrack => Box::new(veltrack::VelTrack::new(task.clone(), horizon, mode)),
        TaskFamily::LgssDiagnostic => Box::new(lgss::LgssEnv::from_task(task.clone(), horizon)?),
    })
}

/// Shaped reward used by the goal-reaching families:
/// r = −(d² + ln(d + 1e−5)), strongly positive as d → 0.
pub fn goal_shaped_reward(d: f64) -> f64 {
    -(d * d + (d + 1e-5).ln())
}
