//! Linear-Gaussian diagnostic family.
//!
//! The latent model's posterior class is per-step diagonal Gaussians with
//! affine heads, so the diagnostic instances are built diagonal-friendly:
//! C = I, diagonal A/Q/R/Σ₀, and a reward row aligned to a single latent
//! axis. On these systems the exact filtering posterior *is* a diagonal
//! Gaussian with affine mean and constant variance — representable by the
//! learned model exactly — and the Kalman oracle supplies ground truth.
//!
//! The reward is part of the observed evidence: the stacked system appends
//! the reward as one extra observation row, so `kalman_filter` on the
//! stacked observations conditions on rewards exactly the way the learned
//! posterior does.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::envs::{Environment, ObsSpec, Observation, StepInfo, StepResult, Task, TaskFamily};
use crate::error::{Error, Result};
use crate::oracles::kalman::{kalman_filter, FilterResult, Lgss};
use crate::rng::Rng;

/// Latent dimension of sampled diagnostic tasks.
pub const DEFAULT_LATENT_DIM: usize = 4;

/// A diagonal-friendly linear-Gaussian system with the reward stacked as
/// the last observation row.
#[derive(Debug, Clone)]
pub struct DiagnosticLgss {
    /// Full system; observation rows = [proprio observations; reward].
    pub stacked: Lgss,
    /// Number of non-reward observation rows.
    pub obs_dim: usize,
}

/// A simulated trajectory with the reward channel split out.
#[derive(Debug, Clone)]
pub struct LgssTrajectory {
    /// Latent states z_{1:T}.
    pub latents: Vec<DVector<f64>>,
    /// Observations x_{1:T} (without the reward row).
    pub observations: Vec<Vec<f64>>,
    /// Rewards r_{1:T} — emitted at every index including t = 1.
    pub rewards: Vec<f64>,
    /// Actions a_{1:T−1}.
    pub actions: Vec<Vec<f64>>,
}

impl DiagnosticLgss {
    /// Build a diagonal instance: C = I over `l` latent dimensions,
    /// diagonal noise, reward row = scale·e₀. `a_scale = 0` produces a
    /// memoryless system (A = 0) on which causal filtering is lossless.
    pub fn diagonal(l: usize, a_scale: f64, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, "lgss-diagnostic");
        let diag = |rng: &mut Rng, lo: f64, hi: f64, n: usize| {
            DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(lo..hi)))
        };
        let a = diag(&mut rng, -0.9, 0.9, l) * a_scale;
        let b = DMatrix::from_fn(l, 1, |_, _| rng.gen_range(-0.5..0.5));
        let q = diag(&mut rng, 0.05, 0.5, l);
        let sigma0 = diag(&mut rng, 0.2, 1.0, l);
        let mu0 = DVector::from_fn(l, |_, _| rng.gen_range(-0.5..0.5));
        // Stacked observation matrix: identity rows, then the reward row.
        let mut c = DMatrix::zeros(l + 1, l);
        for i in 0..l {
            c[(i, i)] = 1.0;
        }
        let reward_coeff = rng.gen_range(0.5..1.5);
        c[(l, 0)] = reward_coeff;
        let mut r = DMatrix::zeros(l + 1, l + 1);
        for i in 0..l {
            r[(i, i)] = rng.gen_range(0.05..0.5);
        }
        r[(l, l)] = rng.gen_range(0.05..0.3);
        DiagnosticLgss {
            stacked: Lgss { a, b, c, q, r, mu0, sigma0 },
            obs_dim: l,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.stacked.state_dim()
    }

    /// Simulate a trajectory of `horizon` records under the given actions
    /// (length horizon−1).
    pub fn simulate(&self, actions: &[Vec<f64>], rng: &mut Rng) -> LgssTrajectory {
        let acts: Vec<DVector<f64>> = actions
            .iter()
            .map(|a| DVector::from_vec(a.clone()))
            .collect();
        let (latents, ys) = self.stacked.simulate(&acts, rng);
        let observations = ys
            .iter()
            .map(|y| y.as_slice()[..self.obs_dim].to_vec())
            .collect();
        let rewards = ys.iter().map(|y| y[self.obs_dim]).collect();
        LgssTrajectory {
            latents,
            observations,
            rewards,
            actions: actions.to_vec(),
        }
    }

    /// Re-stack (observations, rewards) into full observation vectors.
    pub fn stack_evidence(&self, traj: &LgssTrajectory) -> Vec<DVector<f64>> {
        traj.observations
            .iter()
            .zip(&traj.rewards)
            .map(|(x, &r)| {
                let mut y = x.clone();
                y.push(r);
                DVector::from_vec(y)
            })
            .collect()
    }

    /// Exact filtering over the full evidence (observations AND rewards).
    pub fn filter(&self, traj: &LgssTrajectory) -> Result<FilterResult> {
        let ys = self.stack_evidence(traj);
        let acts: Vec<DVector<f64>> = traj
            .actions
            .iter()
            .map(|a| DVector::from_vec(a.clone()))
            .collect();
        kalman_filter(&self.stacked, &ys, &acts)
    }

    /// Exact log p(x_{1:T}, r_{1:T} | a_{1:T−1}).
    pub fn exact_log_likelihood(&self, traj: &LgssTrajectory) -> Result<f64> {
        Ok(self.filter(traj)?.log_likelihood)
    }
}

/// Task params = [latent_dim, a_scale, system_seed].
pub fn sample_task(id: u64, rng: &mut Rng) -> Task {
    let sys_seed = rng.gen_range(0..u32::MAX) as f64;
    Task {
        family: TaskFamily::LgssDiagnostic,
        id,
        params: vec![DEFAULT_LATENT_DIM as f64, 0.7, sys_seed],
    }
}

/// RL-facing wrapper. Observations are the proprio rows; the reward row
/// arrives through the reward channel (from `step` — the t = 1 reward is
/// dropped by the episode convention, matching the other families).
pub struct LgssEnv {
    task: Task,
    system: DiagnosticLgss,
    horizon: usize,
    z: DVector<f64>,
    rng: Rng,
    t: usize,
    started: bool,
}

impl LgssEnv {
    pub fn from_task(task: Task, horizon: usize) -> Result<Self> {
        if task.params.len() != 3 {
            return Err(Error::Config(format!(
                "lgss-diagnostic task needs 3 params, got {}",
                task.params.len()
            )));
        }
        let l = task.params[0] as usize;
        let a_scale = task.params[1];
        let seed = task.params[2] as u64;
        let system = DiagnosticLgss::diagonal(l, a_scale, seed);
        Ok(LgssEnv {
            task,
            system,
            horizon,
            z: DVector::zeros(l),
            rng: crate::rng::stream(0, "lgss-env"),
            t: 0,
            started: false,
        })
    }

    fn observe(&mut self) -> (Vec<f64>, f64) {
        let chol_r = self
            .system
            .stacked
            .r
            .clone()
            .cholesky()
            .expect("R SPD")
            .l();
        let noise = DVector::from_fn(self.system.stacked.obs_dim(), |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut self.rng)
        });
        let y = &self.system.stacked.c * &self.z + chol_r * noise;
        let obs = y.as_slice()[..self.system.obs_dim].to_vec();
        (obs, y[self.system.obs_dim])
    }
}

impl Environment for LgssEnv {
    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Proprio { d: self.system.obs_dim }
    }

    fn action_dim(&self) -> usize {
        self.system.stacked.action_dim()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn task(&self) -> &Task {
        &self.task
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = crate::rng::substream(seed, "lgss-env", self.task.id);
        let chol_s0 = self
            .system
            .stacked
            .sigma0
            .clone()
            .cholesky()
            .expect("Sigma0 SPD")
            .l();
        let noise = DVector::from_fn(self.system.latent_dim(), |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut self.rng)
        });
        self.z = &self.system.stacked.mu0 + chol_s0 * noise;
        self.t = 1;
        self.started = true;
        self.observe().0
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if !self.started || self.t >= self.horizon {
            return Err(Error::Usage("lgss-diagnostic: step after episode end".into()));
        }
        let a = DVector::from_vec(action.to_vec());
        let chol_q = self.system.stacked.q.clone().cholesky().expect("Q SPD").l();
        let noise = DVector::from_fn(self.system.latent_dim(), |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut self.rng)
        });
        self.z = &self.system.stacked.a * &self.z + &self.system.stacked.b * a + chol_q * noise;
        self.t += 1;
        let (obs, reward) = self.observe();
        Ok(StepResult {
            obs,
            reward,
            shaped_reward: reward,
            sparse_reward: 0.0,
            done: self.t == self.horizon,
            info: StepInfo {
                state: self.z.as_slice().to_vec(),
                dist: 0.0,
                success: false,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn diagonal_instances_are_reproducible() {
        let s1 = DiagnosticLgss::diagonal(4, 0.7, 9);
        let s2 = DiagnosticLgss::diagonal(4, 0.7, 9);
        assert_eq!(s1.stacked.a, s2.stacked.a);
        assert_eq!(s1.stacked.r, s2.stacked.r);
    }

    #[test]
    fn a_scale_zero_is_memoryless() {
        let s = DiagnosticLgss::diagonal(3, 0.0, 5);
        assert!(s.stacked.a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reward_row_is_axis_aligned() {
        let s = DiagnosticLgss::diagonal(4, 0.7, 11);
        let l = s.latent_dim();
        assert!(s.stacked.c[(l, 0)] > 0.0);
        for j in 1..l {
            assert_eq!(s.stacked.c[(l, j)], 0.0);
        }
    }

    #[test]
    fn simulate_emits_reward_at_every_record() {
        let s = DiagnosticLgss::diagonal(3, 0.5, 2);
        let mut rng = stream(0, "sim");
        let actions = vec![vec![0.3], vec![-0.2], vec![0.1]];
        let traj = s.simulate(&actions, &mut rng);
        assert_eq!(traj.observations.len(), 4);
        assert_eq!(traj.rewards.len(), 4);
        assert_eq!(traj.latents.len(), 4);
    }

    #[test]
    fn filter_consumes_rewards_as_evidence() {
        // Changing ONLY the reward at t = 1 must move the filtered mean.
        let s = DiagnosticLgss::diagonal(3, 0.5, 7);
        let mut rng = stream(1, "sim");
        let actions = vec![vec![0.2]; 3];
        let mut traj = s.simulate(&actions, &mut rng);
        let base = s.filter(&traj).unwrap();
        traj.rewards[0] += 1.0;
        let shifted = s.filter(&traj).unwrap();
        let gap = (&base.means[0] - &shifted.means[0]).abs().max();
        assert!(gap > 1e-6, "reward evidence ignored by the filter");
    }

    #[test]
    fn env_runs_and_terminates() {
        let mut rng = stream(2, "task");
        let task = sample_task(0, &mut rng);
        let mut env = LgssEnv::from_task(task, 10).unwrap();
        let o = env.reset(3);
        assert_eq!(o.len(), DEFAULT_LATENT_DIM);
        for t in 2..=10 {
            let r = env.step(&[0.1]).unwrap();
            assert_eq!(r.done, t == 10);
        }
        assert!(env.step(&[0.1]).is_err());
    }

    #[test]
    fn env_reset_is_seed_deterministic() {
        let mut rng = stream(4, "task");
        let task = sample_task(0, &mut rng);
        let mut e1 = LgssEnv::from_task(task.clone(), 10).unwrap();
        let mut e2 = LgssEnv::from_task(task, 10).unwrap();
        assert_eq!(e1.reset(5), e2.reset(5));
        assert_eq!(
            e1.step(&[0.3]).unwrap().obs,
            e2.step(&[0.3]).unwrap().obs
        );
        assert_ne!(e1.reset(5), e1.reset(6));
    }
}
