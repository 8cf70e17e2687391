//! Exact filtering for linear-Gaussian state-space systems.
//!
//! The system is
//!
//! ```text
//! z₁ ~ N(μ₀, Σ₀)
//! z_{t+1} = A·z_t + B·a_t + w_t,   w_t ~ N(0, Q)
//! y_t     = C·z_t + v_t,           v_t ~ N(0, R)
//! ```
//!
//! `kalman_filter` runs the standard predict/update recursion (Joseph-form
//! covariance update) and accumulates the exact log-likelihood from the
//! innovations. `joint_conditional` is a second, slower route to the same
//! posteriors — brute-force conditioning of the full joint Gaussian over
//! (z_{1:T}, y_{1:T}) — so the two can check each other.

use crate::error::{Error, Result};
use crate::rng::Rng;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

/// A linear-Gaussian state-space system.
#[derive(Debug, Clone)]
pub struct Lgss {
    /// State transition, L×L.
    pub a: DMatrix<f64>,
    /// Control matrix, L×d_a.
    pub b: DMatrix<f64>,
    /// Observation matrix, D_y×L.
    pub c: DMatrix<f64>,
    /// Process noise covariance, L×L, SPD.
    pub q: DMatrix<f64>,
    /// Observation noise covariance, D_y×D_y, SPD.
    pub r: DMatrix<f64>,
    /// Initial state mean.
    pub mu0: DVector<f64>,
    /// Initial state covariance, SPD.
    pub sigma0: DMatrix<f64>,
}

impl Lgss {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Check dimension consistency and SPD-ness of the noise covariances.
    pub fn validate(&self) -> Result<()> {
        let l = self.state_dim();
        if self.a.ncols() != l
            || self.b.nrows() != l
            || self.q.nrows() != l
            || self.q.ncols() != l
            || self.c.ncols() != l
            || self.r.nrows() != self.c.nrows()
            || self.r.ncols() != self.c.nrows()
            || self.mu0.len() != l
            || self.sigma0.nrows() != l
            || self.sigma0.ncols() != l
        {
            return Err(Error::Usage("lgss: inconsistent dimensions".into()));
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("Sigma0", &self.sigma0)] {
            if m.clone().cholesky().is_none() {
                return Err(Error::Usage(format!("lgss: {name} not positive definite")));
            }
        }
        Ok(())
    }

    /// Draw a trajectory: returns (latent states z_{1:T}, observations y_{1:T}).
    ///
    /// `actions` has length T−1; action a_t drives the transition from z_t
    /// to z_{t+1}. An observation is emitted at every step including t=1.
    pub fn simulate(&self, actions: &[DVector<f64>], rng: &mut Rng) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let horizon = actions.len() + 1;
        let chol_q = self.q.clone().cholesky().expect("Q must be SPD").l();
        let chol_r = self.r.clone().cholesky().expect("R must be SPD").l();
        let chol_s0 = self.sigma0.clone().cholesky().expect("Sigma0 must be SPD").l();
        let mut zs = Vec::with_capacity(horizon);
        let mut ys = Vec::with_capacity(horizon);
        let mut z = &self.mu0 + &chol_s0 * standard_normal_vec(self.state_dim(), rng);
        for t in 0..horizon {
            let y = &self.c * &z + &chol_r * standard_normal_vec(self.obs_dim(), rng);
            ys.push(y);
            zs.push(z.clone());
            if t + 1 < horizon {
                z = &self.a * &z + &self.b * &actions[t] + &chol_q * standard_normal_vec(self.state_dim(), rng);
            }
        }
        (zs, ys)
    }
}

fn standard_normal_vec(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Output of the Kalman filter: per-step posterior marginals and the exact
/// log-likelihood of the observation sequence.
#[derive(Debug, Clone)]
pub struct FilterResult {
    /// Filtered means m_t = E[z_t | y_{1:t}, a_{1:t−1}].
    pub means: Vec<DVector<f64>>,
    /// Filtered covariances P_t.
    pub covs: Vec<DMatrix<f64>>,
    /// Predicted (prior) means m⁻_t = E[z_t | y_{1:t−1}, a_{1:t−1}].
    pub pred_means: Vec<DVector<f64>>,
    /// Predicted covariances P⁻_t.
    pub pred_covs: Vec<DMatrix<f64>>,
    /// log p(y_{1:T} | a_{1:T−1}), summed innovation log-densities.
    pub log_likelihood: f64,
}

/// Exact Kalman filter over `observations` (length T) given `actions`
/// (length T−1).
pub fn kalman_filter(
    sys: &Lgss,
    observations: &[DVector<f64>],
    actions: &[DVector<f64>],
) -> Result<FilterResult> {
    sys.validate()?;
    let horizon = observations.len();
    if horizon == 0 {
        return Err(Error::Usage("kalman_filter: empty observation sequence".into()));
    }
    if actions.len() + 1 != horizon {
        return Err(Error::Usage(format!(
            "kalman_filter: got {} observations but {} actions (need T-1)",
            horizon,
            actions.len()
        )));
    }
    const LN_2PI: f64 = 1.8378770664093453;
    let l = sys.state_dim();
    let dy = sys.obs_dim();
    let eye = DMatrix::<f64>::identity(l, l);

    let mut pred_mean = sys.mu0.clone();
    let mut pred_cov = sys.sigma0.clone();
    let mut out = FilterResult {
        means: Vec::with_capacity(horizon),
        covs: Vec::with_capacity(horizon),
        pred_means: Vec::with_capacity(horizon),
        pred_covs: Vec::with_capacity(horizon),
        log_likelihood: 0.0,
    };

    for t in 0..horizon {
        // Update with y_t.
        let innovation = &observations[t] - &sys.c * &pred_mean;
        let s = &sys.c * &pred_cov * sys.c.transpose() + &sys.r;
        let chol_s = s.clone().cholesky().ok_or_else(|| {
            Error::numeric("kalman_filter.innovation_cov", format!("not PD at t={}", t + 1))
        })?;
        let s_inv = chol_s.inverse();
        let gain = &pred_cov * sys.c.transpose() * &s_inv;
        let mean = &pred_mean + &gain * &innovation;
        // Joseph form keeps the covariance symmetric PSD under roundoff.
        let j = &eye - &gain * &sys.c;
        let cov = &j * &pred_cov * j.transpose() + &gain * &sys.r * gain.transpose();

        let logdet_s: f64 = chol_s.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let quad = (innovation.transpose() * &s_inv * &innovation)[(0, 0)];
        out.log_likelihood -= 0.5 * (dy as f64 * LN_2PI + logdet_s + quad);

        out.pred_means.push(pred_mean.clone());
        out.pred_covs.push(pred_cov.clone());
        out.means.push(mean.clone());
        out.covs.push(cov.clone());

        // Predict z_{t+1}.
        if t + 1 < horizon {
            pred_mean = &sys.a * &mean + &sys.b * &actions[t];
            pred_cov = &sys.a * &cov * sys.a.transpose() + &sys.q;
        }
    }
    Ok(out)
}

/// Brute-force oracle: build the joint Gaussian over (z_{1:T}, y_{1:T}) and
/// condition z_t on y_{1:t} by dense linear algebra. Returns per-step
/// posterior means/covariances and the joint log-likelihood of y_{1:T}.
///
/// O(T³) — for cross-checking the filter on small instances only.
pub fn joint_conditional(
    sys: &Lgss,
    observations: &[DVector<f64>],
    actions: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>, f64)> {
    sys.validate()?;
    let horizon = observations.len();
    let l = sys.state_dim();
    let dy = sys.obs_dim();

    // Joint mean/cov of z_{1:T} by propagating moments.
    let mut mean_z: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    mean_z.push(sys.mu0.clone());
    for t in 1..horizon {
        mean_z.push(&sys.a * &mean_z[t - 1] + &sys.b * &actions[t - 1]);
    }
    // cov_z[(s,t)] = Cov(z_{s+1}, z_{t+1}) stored for s ≤ t.
    let mut cov_z = vec![vec![DMatrix::<f64>::zeros(l, l); horizon]; horizon];
    cov_z[0][0] = sys.sigma0.clone();
    for t in 1..horizon {
        for s in 0..t {
            cov_z[s][t] = &cov_z[s][t - 1] * sys.a.transpose();
        }
        cov_z[t][t] = &sys.a * &cov_z[t - 1][t - 1] * sys.a.transpose() + &sys.q;
    }
    let cov = |s: usize, t: usize| -> DMatrix<f64> {
        if s <= t {
            cov_z[s][t].clone()
        } else {
            cov_z[t][s].transpose()
        }
    };

    // Moments of y_{1:T}: y_t = C z_t + v_t.
    let mut mu_y = DVector::<f64>::zeros(horizon * dy);
    let mut sig_yy = DMatrix::<f64>::zeros(horizon * dy, horizon * dy);
    for t in 0..horizon {
        mu_y.rows_mut(t * dy, dy).copy_from(&(&sys.c * &mean_z[t]));
        for s in 0..horizon {
            let mut block = &sys.c * cov(t, s) * sys.c.transpose();
            if s == t {
                block += &sys.r;
            }
            sig_yy.view_mut((t * dy, s * dy), (dy, dy)).copy_from(&block);
        }
    }
    let mut y_stack = DVector::<f64>::zeros(horizon * dy);
    for t in 0..horizon {
        y_stack.rows_mut(t * dy, dy).copy_from(&observations[t]);
    }

    // Joint log-likelihood of the stacked observation vector.
    const LN_2PI: f64 = 1.8378770664093453;
    let chol_yy = sig_yy
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("joint_conditional.sig_yy", "not PD"))?;
    let resid = &y_stack - &mu_y;
    let solved = chol_yy.solve(&resid);
    let logdet: f64 = chol_yy.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let log_likelihood =
        -0.5 * ((horizon * dy) as f64 * LN_2PI + logdet + resid.dot(&solved));

    // Condition z_t on y_{1:t} for each t.
    let mut means = Vec::with_capacity(horizon);
    let mut covs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let ny = (t + 1) * dy;
        let sig_sub = sig_yy.view((0, 0), (ny, ny)).into_owned();
        let mut sig_zy = DMatrix::<f64>::zeros(l, ny);
        for s in 0..=t {
            sig_zy
                .view_mut((0, s * dy), (l, dy))
                .copy_from(&(cov(t, s) * sys.c.transpose()));
        }
        let chol = sig_sub
            .cholesky()
            .ok_or_else(|| Error::numeric("joint_conditional.sig_sub", "not PD"))?;
        let resid_t = y_stack.rows(0, ny) - mu_y.rows(0, ny);
        // μ_post = μ_z + Σ_zy Σ_yy⁻¹ (y − μ_y);  Σ_post = Σ_zz − Σ_zy Σ_yy⁻¹ Σ_yz.
        let solve_resid = chol.solve(&resid_t.into_owned());
        let solve_cross = chol.solve(&sig_zy.transpose());
        means.push(&mean_z[t] + &sig_zy * solve_resid);
        covs.push(cov(t, t) - &sig_zy * solve_cross);
    }
    Ok((means, covs, log_likelihood))
}

/// A random well-conditioned system for property tests: diagonal-free dense
/// matrices, SPD covariances with eigenvalues bounded away from zero.
pub fn random_system(l: usize, dy: usize, da: usize, rng: &mut Rng) -> Lgss {
    let randn_mat = |r: usize, c: usize, rng: &mut Rng| {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    };
    let spd = |n: usize, rng: &mut Rng| {
        let g = randn_mat(n, n, rng) * 0.5;
        &g * g.transpose() + DMatrix::<f64>::identity(n, n) * 0.3
    };
    Lgss {
        a: randn_mat(l, l, rng) * 0.6,
        b: randn_mat(l, da, rng) * 0.5,
        c: randn_mat(dy, l, rng),
        q: spd(l, rng),
        r: spd(dy, rng),
        mu0: standard_normal_vec(l, rng),
        sigma0: spd(l, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    fn scalar_sys(a: f64, q: f64, c: f64, r: f64, mu0: f64, s0: f64) -> Lgss {
        Lgss {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::zeros(1, 1),
            c: DMatrix::from_element(1, 1, c),
            q: DMatrix::from_element(1, 1, q),
            r: DMatrix::from_element(1, 1, r),
            mu0: DVector::from_element(1, mu0),
            sigma0: DMatrix::from_element(1, 1, s0),
        }
    }

    #[test]
    fn static_system_matches_conjugate_posterior() {
        // A=1, Q≈0: n noisy observations of a fixed latent from prior
        // N(0, σ₀²) → posterior variance 1/(1/σ₀² + n/σ²).
        let sigma0_sq = 2.0;
        let sigma_sq = 0.5;
        let n = 5;
        let sys = scalar_sys(1.0, 1e-14, 1.0, sigma_sq, 0.0, sigma0_sq);
        let obs: Vec<DVector<f64>> = [0.4, -0.2, 0.9, 0.1, 0.3]
            .iter()
            .map(|&y| DVector::from_element(1, y))
            .collect();
        let actions = vec![DVector::zeros(1); n - 1];
        let res = kalman_filter(&sys, &obs, &actions).unwrap();
        let expected_var = 1.0 / (1.0 / sigma0_sq + n as f64 / sigma_sq);
        assert_abs_diff_eq!(res.covs[n - 1][(0, 0)], expected_var, epsilon = 1e-9);
        // Posterior mean is the precision-weighted average of the prior
        // mean (0) and the observation mean.
        let ybar: f64 = obs.iter().map(|y| y[0]).sum::<f64>() / n as f64;
        let expected_mean = expected_var * (n as f64 / sigma_sq) * ybar;
        assert_abs_diff_eq!(res.means[n - 1][0], expected_mean, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_observation_pins_posterior_mean() {
        // R → 0 with C = 1: the update collapses onto the observation.
        let sys = scalar_sys(0.8, 0.3, 1.0, 1e-14, 0.5, 1.0);
        let obs = vec![
            DVector::from_element(1, 1.7),
            DVector::from_element(1, -0.4),
        ];
        let actions = vec![DVector::zeros(1)];
        let res = kalman_filter(&sys, &obs, &actions).unwrap();
        assert_abs_diff_eq!(res.means[0][0], 1.7, epsilon = 1e-9);
        assert_abs_diff_eq!(res.means[1][0], -0.4, epsilon = 1e-9);
        assert!(res.covs[1][(0, 0)] < 1e-9);
    }

    #[test]
    fn filter_matches_dense_joint_conditioning() {
        let mut rng = stream(3, "kalman-vs-joint");
        for trial in 0..5 {
            let sys = random_system(3, 2, 2, &mut rng);
            let actions: Vec<DVector<f64>> =
                (0..2).map(|_| standard_normal_vec(2, &mut rng)).collect();
            let (_zs, ys) = sys.simulate(&actions, &mut rng);
            let filt = kalman_filter(&sys, &ys, &actions).unwrap();
            let (means, covs, ll) = joint_conditional(&sys, &ys, &actions).unwrap();
            for t in 0..3 {
                let dm = (&filt.means[t] - &means[t]).abs().max();
                let dc = (&filt.covs[t] - &covs[t]).abs().max();
                assert!(dm < 1e-10, "trial {trial} t {t}: mean gap {dm}");
                assert!(dc < 1e-10, "trial {trial} t {t}: cov gap {dc}");
            }
            assert_abs_diff_eq!(filt.log_likelihood, ll, epsilon = 1e-9);
        }
    }

    #[test]
    fn control_inputs_shift_predictions() {
        let mut sys = scalar_sys(1.0, 0.1, 1.0, 0.1, 0.0, 1.0);
        sys.b = DMatrix::from_element(1, 1, 2.0);
        let obs = vec![DVector::zeros(1), DVector::from_element(1, 2.0)];
        let actions = vec![DVector::from_element(1, 1.0)];
        let res = kalman_filter(&sys, &obs, &actions).unwrap();
        // Predicted mean at t=2 is A·m₁ + B·a₁ = m₁ + 2.
        assert_abs_diff_eq!(res.pred_means[1][0], res.means[0][0] + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let sys = scalar_sys(1.0, 0.1, 1.0, 0.1, 0.0, 1.0);
        let obs = vec![DVector::zeros(1); 3];
        let actions = vec![DVector::zeros(1); 3]; // should be T−1 = 2
        assert!(kalman_filter(&sys, &obs, &actions).is_err());
    }

    #[test]
    fn simulate_is_deterministic_under_seed() {
        let mut r1 = stream(9, "sim");
        let mut r2 = stream(9, "sim");
        let sys = random_system(2, 2, 1, &mut stream(9, "sys"));
        let actions = vec![DVector::from_element(1, 0.3); 4];
        let (z1, y1) = sys.simulate(&actions, &mut r1);
        let (z2, y2) = sys.simulate(&actions, &mut r2);
        for t in 0..5 {
            assert_eq!(z1[t], z2[t]);
            assert_eq!(y1[t], y2[t]);
        }
    }
}
