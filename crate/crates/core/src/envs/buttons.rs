//! Button panel: four identical-looking buttons, one of which is correct.
//!
//! The panel (a row of K = 4 buttons spaced 0.4 apart) is shifted by a
//! per-task 2-D offset in [−0.2, 0.2]²; the correct-button index is also
//! per task. The effector starts at a home pose below the panel and moves
//! in 2-D. A press registers whenever the effector is within the press
//! radius of a button; pressing the correct button pays sparse reward 1.0
//! on that step (wrong buttons pay nothing). Observations render all
//! buttons identically — nothing in the pixels marks the correct one.

use rand::Rng as _;

use crate::envs::render::Canvas;
use crate::envs::{
    goal_shaped_reward, Environment, ObsSpec, Observation, RewardMode, StepInfo, StepResult, Task,
    TaskFamily,
};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Number of buttons.
pub const NUM_BUTTONS: usize = 4;
/// Base button x positions before the panel offset.
pub const BUTTON_XS: [f64; NUM_BUTTONS] = [-0.6, -0.2, 0.2, 0.6];
/// Panel offset range per axis.
pub const PANEL_OFFSET: f64 = 0.2;
/// Press registers within this distance of a button center.
pub const PRESS_RADIUS: f64 = 0.1;
/// Effector displacement per unit action.
pub const STEP_SCALE: f64 = 0.12;
/// Home pose of the effector.
pub const HOME: [f64; 2] = [0.0, -0.7];
const BUTTON_MARKER_RADIUS: f64 = 0.11;
const EFFECTOR_MARKER_RADIUS: f64 = 0.14;

/// Draw one task: params = [correct_index, offset_x, offset_y].
pub fn sample_task(id: u64, rng: &mut Rng) -> Task {
    let correct = rng.gen_range(0..NUM_BUTTONS) as f64;
    let ox = rng.gen_range(-PANEL_OFFSET..PANEL_OFFSET);
    let oy = rng.gen_range(-PANEL_OFFSET..PANEL_OFFSET);
    Task {
        family: TaskFamily::ButtonPanel,
        id,
        params: vec![correct, ox, oy],
    }
}

pub struct ButtonPanel {
    task: Task,
    image_size: usize,
    horizon: usize,
    mode: RewardMode,
    pos: [f64; 2],
    t: usize,
    started: bool,
}

impl ButtonPanel {
    pub fn new(task: Task, image_size: usize, horizon: usize, mode: RewardMode) -> Self {
        debug_assert_eq!(task.family, TaskFamily::ButtonPanel);
        ButtonPanel {
            task,
            image_size,
            horizon,
            mode,
            pos: HOME,
            t: 0,
            started: false,
        }
    }

    pub fn correct_index(&self) -> usize {
        self.task.params[0] as usize
    }

    /// World position of button `i` under this task's panel offset.
    pub fn button_pos(&self, i: usize) -> (f64, f64) {
        (BUTTON_XS[i] + self.task.params[1], self.task.params[2])
    }

    fn dist_to(&self, p: (f64, f64)) -> f64 {
        ((self.pos[0] - p.0).powi(2) + (self.pos[1] - p.1).powi(2)).sqrt()
    }

    fn render(&self) -> Observation {
        let mut c = Canvas::new(self.image_size);
        c.frame(0.25);
        for i in 0..NUM_BUTTONS {
            let (bx, by) = self.button_pos(i);
            c.disk(bx, by, BUTTON_MARKER_RADIUS, 0.6);
        }
        c.disk(self.pos[0], self.pos[1], EFFECTOR_MARKER_RADIUS, 1.0);
        c.into_obs()
    }
}

impl Environment for ButtonPanel {
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
        self.pos = HOME;
        self.t = 1;
        self.started = true;
        self.render()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if !self.started || self.t >= self.horizon {
            return Err(Error::Usage("buttonpanel: step after episode end".into()));
        }
        if action.len() != 2 {
            return Err(Error::Usage(format!(
                "buttonpanel: action dim {} (expected 2)",
                action.len()
            )));
        }
        self.pos[0] = (self.pos[0] + STEP_SCALE * action[0].clamp(-1.0, 1.0)).clamp(-1.0, 1.0);
        self.pos[1] = (self.pos[1] + STEP_SCALE * action[1].clamp(-1.0, 1.0)).clamp(-1.0, 1.0);
        self.t += 1;

        let correct = self.correct_index();
        let d_correct = self.dist_to(self.button_pos(correct));
        let pressed_correct = d_correct <= PRESS_RADIUS;
        let shaped = goal_shaped_reward(d_correct);
        let sparse = if pressed_correct { 1.0 } else { 0.0 };
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
                dist: d_correct,
                success: pressed_correct,
            },
        })
    }
}
