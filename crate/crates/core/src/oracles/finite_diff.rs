//! Central finite-difference gradients for gradient checking.

/// Estimate ∇f at `point` by central differences with step `h` per
/// coordinate: (f(x + h·eᵢ) − f(x − h·eᵢ)) / (2h).
///
/// `f` must be a deterministic scalar function of the full vector (fix any
/// sampling noise seeds before calling).
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Largest relative error between an analytic gradient and a finite
/// difference estimate, with an absolute floor to keep near-zero entries
/// from blowing up the ratio.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_gradient() {
        // f(x) = x² at x = 3 → 6 within 1e−8.
        let g = finite_diff_grad(&mut |x| x[0] * x[0], &[3.0], 1e-5);
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-8);
    }

    #[test]
    fn constant_function_zero_gradient() {
        let g = finite_diff_grad(&mut |_| 4.2, &[1.0, -2.0, 0.5], 1e-5);
        for gi in g {
            assert_abs_diff_eq!(gi, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn multivariate_cross_terms() {
        // f(x, y) = x·y + sin(x) → ∇ = (y + cos x, x).
        let p = [0.7, -1.3];
        let g = finite_diff_grad(&mut |x| x[0] * x[1] + x[0].sin(), &p, 1e-6);
        assert_abs_diff_eq!(g[0], -1.3 + 0.7f64.cos(), epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], 0.7, epsilon = 1e-8);
    }

    #[test]
    fn rel_error_metric() {
        assert!(max_rel_error(&[1.0, 2.0], &[1.0, 2.0]) < 1e-15);
        assert!(max_rel_error(&[1.0], &[1.1]) > 0.09);
        // Both near zero: absolute floor keeps this small.
        assert!(max_rel_error(&[1e-9], &[0.0]) < 1e-2);
    }
}
