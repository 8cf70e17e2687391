//! Closed-form Gaussian quantities and their Monte-Carlo counterparts.

use crate::error::{Error, Result};
use crate::rng::Rng;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

/// KL(N(μ₀, diag(σ₀²)) ‖ N(μ₁, diag(σ₁²))), summed over dimensions.
///
/// Closed form per dimension: ½·(ln(σ₁²/σ₀²) + (σ₀² + (μ₀−μ₁)²)/σ₁² − 1).
pub fn gaussian_kl(mu0: &[f64], var0: &[f64], mu1: &[f64], var1: &[f64]) -> Result<f64> {
    if mu0.len() != var0.len() || mu0.len() != mu1.len() || mu0.len() != var1.len() {
        return Err(Error::Usage(format!(
            "gaussian_kl: mismatched dimensions {}/{}/{}/{}",
            mu0.len(),
            var0.len(),
            mu1.len(),
            var1.len()
        )));
    }
    let mut kl = 0.0;
    for i in 0..mu0.len() {
        if var0[i] <= 0.0 || var1[i] <= 0.0 {
            return Err(Error::Usage(format!(
                "gaussian_kl: non-positive variance at dim {i} (p: {}, q: {})",
                var0[i], var1[i]
            )));
        }
        let dm = mu0[i] - mu1[i];
        kl += 0.5 * ((var1[i] / var0[i]).ln() + (var0[i] + dm * dm) / var1[i] - 1.0);
    }
    Ok(kl)
}

/// KL between full-covariance Gaussians (used by analytic linear-system
/// derivations, where posteriors are not diagonal).
pub fn gaussian_kl_full(
    mu0: &DVector<f64>,
    cov0: &DMatrix<f64>,
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
) -> Result<f64> {
    let k = mu0.len() as f64;
    let chol1 = cov1
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Usage("gaussian_kl_full: cov1 not positive definite".into()))?;
    let chol0 = cov0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Usage("gaussian_kl_full: cov0 not positive definite".into()))?;
    let inv1 = chol1.inverse();
    let dm = mu1 - mu0;
    let trace = (&inv1 * cov0).trace();
    let quad = (dm.transpose() * &inv1 * &dm)[(0, 0)];
    let logdet0: f64 = chol0.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let logdet1: f64 = chol1.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(0.5 * (trace + quad - k + logdet1 - logdet0))
}

/// Log-density of a diagonal Gaussian at `x`, summed over dimensions.
pub fn diag_gaussian_log_density(x: &[f64], mu: &[f64], var: &[f64]) -> f64 {
    const LN_2PI: f64 = 1.8378770664093453;
    let mut lp = 0.0;
    for i in 0..x.len() {
        let d = x[i] - mu[i];
        lp -= 0.5 * (LN_2PI + var[i].ln() + d * d / var[i]);
    }
    lp
}

/// Monte-Carlo estimate of KL(p‖q) for diagonal Gaussians: sample x ~ p,
/// average log p(x) − log q(x). Returns (estimate, standard error).
pub fn mc_gaussian_kl(
    mu0: &[f64],
    var0: &[f64],
    mu1: &[f64],
    var1: &[f64],
    n_samples: usize,
    rng: &mut Rng,
) -> (f64, f64) {
    let d = mu0.len();
    let std0: Vec<f64> = var0.iter().map(|v| v.sqrt()).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut x = vec![0.0; d];
    for _ in 0..n_samples {
        for i in 0..d {
            let eps: f64 = StandardNormal.sample(rng);
            x[i] = mu0[i] + std0[i] * eps;
        }
        let v = diag_gaussian_log_density(&x, mu0, var0) - diag_gaussian_log_density(&x, mu1, var1);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn kl_identical_is_zero() {
        let kl = gaussian_kl(&[0.0, 1.0], &[1.0, 2.0], &[0.0, 1.0], &[1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(kl, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kl_unit_mean_shift_is_half() {
        // KL(N(1,1) ‖ N(0,1)) = μ²/2 = 0.5.
        let kl = gaussian_kl(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(kl, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kl_variance_four_closed_form() {
        // KL(N(0,4) ‖ N(0,1)) = (4 − 1 − ln 4)/2 ≈ 0.80685.
        let kl = gaussian_kl(&[0.0], &[4.0], &[0.0], &[1.0]).unwrap();
        let expected = (4.0 - 1.0 - 4.0_f64.ln()) / 2.0;
        assert_abs_diff_eq!(kl, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(kl, 0.8068528194400547, epsilon = 1e-12);
    }

    #[test]
    fn kl_rejects_non_positive_variance() {
        assert!(gaussian_kl(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
        assert!(gaussian_kl(&[0.0], &[1.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo_within_three_se() {
        let mut rng = stream(11, "kl-mc-test");
        let mu0 = [0.3, -0.7, 1.2];
        let var0 = [0.5, 2.0, 0.9];
        let mu1 = [0.0, 0.1, 1.0];
        let var1 = [1.0, 1.5, 0.4];
        let exact = gaussian_kl(&mu0, &var0, &mu1, &var1).unwrap();
        let (est, se) = mc_gaussian_kl(&mu0, &var0, &mu1, &var1, 100_000, &mut rng);
        assert!(
            (est - exact).abs() <= 3.0 * se,
            "MC {est} vs exact {exact}, se {se}"
        );
    }

    #[test]
    fn full_cov_kl_agrees_with_diagonal_case() {
        let mu0 = DVector::from_vec(vec![0.3, -0.7]);
        let mu1 = DVector::from_vec(vec![0.0, 0.1]);
        let cov0 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let cov1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.5]));
        let full = gaussian_kl_full(&mu0, &cov0, &mu1, &cov1).unwrap();
        let diag = gaussian_kl(&[0.3, -0.7], &[0.5, 2.0], &[0.0, 0.1], &[1.0, 1.5]).unwrap();
        assert_abs_diff_eq!(full, diag, epsilon = 1e-12);
    }

    #[test]
    fn log_density_at_mean_unit_variance() {
        // log N(μ; μ, 1) = −½·ln(2π) ≈ −0.91894 per dimension.
        let lp = diag_gaussian_log_density(&[2.0], &[2.0], &[1.0]);
        assert_abs_diff_eq!(lp, -0.9189385332046727, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn kl_non_negative(
            mu0 in proptest::collection::vec(-5.0..5.0f64, 1..6),
            seeds in proptest::collection::vec((0.01..4.0f64, -5.0..5.0f64, 0.01..4.0f64), 1..6),
        ) {
            let d = mu0.len().min(seeds.len());
            let mu0 = &mu0[..d];
            let var0: Vec<f64> = seeds[..d].iter().map(|s| s.0).collect();
            let mu1: Vec<f64> = seeds[..d].iter().map(|s| s.1).collect();
            let var1: Vec<f64> = seeds[..d].iter().map(|s| s.2).collect();
            let kl = gaussian_kl(mu0, &var0, &mu1, &var1).unwrap();
            prop_assert!(kl >= -1e-12, "KL must be non-negative, got {kl}");
            let self_kl = gaussian_kl(mu0, &var0, mu0, &var0).unwrap();
            prop_assert!(self_kl.abs() < 1e-12);
        }
    }
}
