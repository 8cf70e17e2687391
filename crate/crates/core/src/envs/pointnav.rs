//! 2-D point navigation to a hidden goal on a semicircle.
//!
//! The agent starts at the arena center; the goal sits on a semicircle of
//! radius 0.75 at an angle θ ∈ [0, π] drawn per task. Observations are
//! grayscale images showing the arena frame and the agent marker — never
//! the goal. The shaped channel is −(d² + ln(d + 1e−5)); the sparse channel
//! pays 1.0 on every step with d ≤ 0.1 (closed ball), with no early
//! termination.

use rand::Rng as _;

use crate::envs::render::Canvas;
use crate::envs::{
    goal_shaped_reward, Environment, ObsSpec, Observation, RewardMode, StepInfo, StepResult, Task,
    TaskFamily,
};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Distance from center to every goal.
pub const GOAL_RING_RADIUS: f64 = 0.75;
/// Success = within this distance of the goal (10% of the arena scale).
pub const GOAL_RADIUS: f64 = 0.1;
/// Displacement per unit action.
pub const STEP_SCALE: f64 = 0.12;
/// Rendered agent marker radius (world units) — sized to stay clearly
/// visible at 16×16.
const MARKER_RADIUS: f64 = 0.14;
/// Arena frame intensity.
const FRAME_INTENSITY: f64 = 0.25;

/// Draw one task: θ uniform on [0, π]; params = [θ, goal_x, goal_y].
pub fn sample_task(id: u64, rng: &mut Rng) -> Task {
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (gx, gy) = goal_position(theta);
    Task {
        family: TaskFamily::PointNav2d,
        id,
        params: vec![theta, gx, gy],
    }
}

/// Goal coordinates for an angle on the semicircle.
pub fn goal_position(theta: f64) -> (f64, f64) {
    (GOAL_RING_RADIUS * theta.cos(), GOAL_RING_RADIUS * theta.sin())
}

pub struct PointNav {
    task: Task,
    image_size: usize,
    horizon: usize,
    mode: RewardMode,
    pos: [f64; 2],
    /// Records emitted so far (reset = 1).
    t: usize,
    started: bool,
}

impl PointNav {
    pub fn new(task: Task, image_size: usize, horizon: usize, mode: RewardMode) -> Self {
        debug_assert_eq!(task.family, TaskFamily::PointNav2d);
        PointNav {
            task,
            image_size,
            horizon,
            mode,
            pos: [0.0, 0.0],
            t: 0,
            started: false,
        }
    }

    fn goal(&self) -> (f64, f64) {
        (self.task.params[1], self.task.params[2])
    }

    fn dist_to_goal(&self) -> f64 {
        let (gx, gy) = self.goal();
        ((self.pos[0] - gx).powi(2) + (self.pos[1] - gy).powi(2)).sqrt()
    }

    fn render(&self) -> Observation {
        let mut c = Canvas::new(self.image_size);
        c.frame(FRAME_INTENSITY);
        c.disk(self.pos[0], self.pos[1], MARKER_RADIUS, 1.0);
        c.into_obs()
    }
}

impl Environment for PointNav {
    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Pixels {
            h: self.image_size,
            w: self.image_size,
            c: 1,
        }
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn task(&self) -> &Task {
        &self.task
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.pos = [0.0, 0.0];
        self.t = 1;
        self.started = true;
        self.render()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if !self.started || self.t >= self.horizon {
            return Err(Error::Usage("pointnav2d: step after episode end".into()));
        }
        if action.len() != 2 {
            return Err(Error::Usage(format!(
                "pointnav2d: action dim {} (expected 2)",
                action.len()
            )));
        }
        for (i, a) in action.iter().enumerate() {
            if !a.is_finite() || a.abs() > 1.0 + 1e-9 {
                return Err(Error::Usage(format!(
                    "pointnav2d: action[{i}] = {a} outside [-1, 1]"
                )));
            }
        }
        self.pos[0] = (self.pos[0] + STEP_SCALE * action[0]).clamp(-1.0, 1.0);
        self.pos[1] = (self.pos[1] + STEP_SCALE * action[1]).clamp(-1.0, 1.0);
        self.t += 1;

        let d = self.dist_to_goal();
        let shaped = goal_shaped_reward(d);
        let success = d <= GOAL_RADIUS;
        let sparse = if success { 1.0 } else { 0.0 };
        Ok(StepResult {
            obs: self.render(),
            reward: match self.mode {
                RewardMode::Shaped => shaped,
                RewardMode::Sparse => sparse,
            },
            shaped_reward: shaped,
            sparse_reward: sparse,
            done: self.t == self.horizon,
            info: StepInfo {
                state: self.pos.to_vec(),
                dist: d,
                success,
            },
        })
    }
}
