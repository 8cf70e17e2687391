//! Exact affine instantiations of the latent model on linear-Gaussian
//! diagnostic systems, and a closed-form elbo for affine posteriors.
//!
//! On a diagonal-friendly [`DiagnosticLgss`] the one-step conditional
//! posterior p(z_t | z_{t−1}, x_t, r_t, a_{t−1}) is a diagonal Gaussian
//! whose mean is affine in the inputs and whose variance is constant.
//! With no hidden layers the model's Gaussian heads span exactly that
//! family, so we can *write the optimal weights down* instead of training
//! for them:
//!
//! - precision:  Λ = Q⁻¹ + C̃ᵀR̃⁻¹C̃    (diagonal by construction)
//! - mean:       Λ⁻¹ (Q⁻¹(A z + B a) + C̃ᵀR̃⁻¹ y)
//!
//! This turns the Kalman filter into a line-by-line oracle for the
//! learned inference path, and makes elbo-vs-log-likelihood claims
//! testable with zero training noise.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng as _;

use crate::envs::lgss::{DiagnosticLgss, LgssTrajectory};
use crate::envs::ObsSpec;
use crate::error::{Error, Result};
use crate::latent::elbo::SequenceBatch;
use crate::latent::model::{LatentModel, ModelArch, LN_2PI};
use crate::nn::ParamStore;
use crate::rng::Rng;

/// A diagonal diagnostic system whose initial state prior is N(0, I) —
/// the same fixed prior the latent model assumes — so elbo values are
/// directly comparable to the system's exact log-likelihood.
pub fn standardized_system(l: usize, a_scale: f64, seed: u64) -> DiagnosticLgss {
    let mut sys = DiagnosticLgss::diagonal(l, a_scale, seed);
    sys.stacked.mu0 = DVector::zeros(l);
    sys.stacked.sigma0 = DMatrix::identity(l, l);
    sys
}

/// Build a latent model with no hidden layers whose every head computes
/// the exact conditional quantities of `sys`.
pub fn build_affine_model(sys: &DiagnosticLgss) -> Result<(LatentModel, ParamStore)> {
    let l = sys.latent_dim();
    let d = sys.obs_dim;
    if d != l {
        return Err(Error::Usage("affine construction expects C = I (obs_dim == latent_dim)".into()));
    }
    let da = sys.stacked.action_dim();
    let arch = ModelArch {
        latent_dim: l,
        feat_dim: d,
        hidden: vec![],
        conv_channels: vec![],
        ..ModelArch::default()
    };
    let model = LatentModel::new(arch, ObsSpec::Proprio { d }, da);
    let mut store = ParamStore::new();
    let mut rng = crate::rng::stream(0, "affine-construction");
    model.init(&mut store, &mut rng);

    // Diagonal pieces of the system.
    let a: Vec<f64> = (0..l).map(|j| sys.stacked.a[(j, j)]).collect();
    let q: Vec<f64> = (0..l).map(|j| sys.stacked.q[(j, j)]).collect();
    let r: Vec<f64> = (0..l).map(|j| sys.stacked.r[(j, j)]).collect();
    let s0: Vec<f64> = (0..l).map(|j| sys.stacked.sigma0[(j, j)]).collect();
    let mu0: Vec<f64> = (0..l).map(|j| sys.stacked.mu0[j]).collect();
    let c_r = sys.stacked.c[(l, 0)];
    let var_r = sys.stacked.r[(l, l)];
    let b_mat = &sys.stacked.b;

    // Identity encoder: features are the raw observations.
    let mut enc_w = Array2::zeros((d, d));
    for j in 0..d {
        enc_w[(j, j)] = 1.0;
    }
    store.set("model.enc.l0.w", enc_w);
    store.set("model.enc.l0.b", Array2::zeros((1, d)));

    // Initial posterior: prior N(μ₀, Σ₀), evidence [x₁; r₁].
    let lambda1: Vec<f64> = (0..l)
        .map(|j| 1.0 / s0[j] + 1.0 / r[j] + if j == 0 { c_r * c_r / var_r } else { 0.0 })
        .collect();
    let mut q1_w = Array2::zeros((d + 1, 2 * l));
    let mut q1_b = Array2::zeros((1, 2 * l));
    for j in 0..l {
        q1_w[(j, j)] = (1.0 / r[j]) / lambda1[j];
        q1_b[(0, j)] = (mu0[j] / s0[j]) / lambda1[j];
        q1_b[(0, l + j)] = -lambda1[j].ln();
    }
    q1_w[(d, 0)] = (c_r / var_r) / lambda1[0];
    store.set("model.q1.h.w", q1_w);
    store.set("model.q1.h.b", q1_b);

    // Step posterior: prior N(A z + B a, Q), same evidence.
    let lambda: Vec<f64> = (0..l)
        .map(|j| 1.0 / q[j] + 1.0 / r[j] + if j == 0 { c_r * c_r / var_r } else { 0.0 })
        .collect();
    let mut q_w = Array2::zeros((d + 1 + l + da, 2 * l));
    let mut q_b = Array2::zeros((1, 2 * l));
    for j in 0..l {
        q_w[(j, j)] = (1.0 / r[j]) / lambda[j];
        q_w[(d + 1 + j, j)] = (a[j] / q[j]) / lambda[j];
        for m in 0..da {
            q_w[(d + 1 + l + m, j)] = (b_mat[(j, m)] / q[j]) / lambda[j];
        }
        q_b[(0, l + j)] = -lambda[j].ln();
    }
    q_w[(d, 0)] = (c_r / var_r) / lambda[0];
    store.set("model.q.h.w", q_w);
    store.set("model.q.h.b", q_b);

    // Latent dynamics p(z_t | z_{t−1}, a_{t−1}) = N(A z + B a, Q).
    let mut dyn_w = Array2::zeros((l + da, 2 * l));
    let mut dyn_b = Array2::zeros((1, 2 * l));
    for j in 0..l {
        dyn_w[(j, j)] = a[j];
        for m in 0..da {
            dyn_w[(l + m, j)] = b_mat[(j, m)];
        }
        dyn_b[(0, l + j)] = q[j].ln();
    }
    store.set("model.dyn.h.w", dyn_w);
    store.set("model.dyn.h.b", dyn_b);

    // Observation decoder p(x | z) = N(z, R) and reward decoder
    // p(r | z) = N(c·z₀, σ_r²).
    let mut dec_w = Array2::zeros((l, 2 * d));
    let mut dec_b = Array2::zeros((1, 2 * d));
    for j in 0..l {
        dec_w[(j, j)] = 1.0;
        dec_b[(0, d + j)] = r[j].ln();
    }
    store.set("model.dec.h.w", dec_w);
    store.set("model.dec.h.b", dec_b);
    let mut rdec_w = Array2::zeros((l, 2));
    rdec_w[(0, 0)] = c_r;
    let mut rdec_b = Array2::zeros((1, 2));
    rdec_b[(0, 1)] = var_r.ln();
    store.set("model.rdec.h.w", rdec_w);
    store.set("model.rdec.h.b", rdec_b);

    Ok((model, store))
}

/// Wrap one simulated trajectory as a single-sequence batch (both reward
/// channels carry the observed rewards).
pub fn trajectory_batch(traj: &LgssTrajectory) -> SequenceBatch {
    let horizon = traj.observations.len();
    let d = traj.observations[0].len();
    let obs = traj
        .observations
        .iter()
        .map(|x| Array2::from_shape_vec((1, d), x.clone()).expect("row"))
        .collect();
    let rewards = Array2::from_shape_vec((1, horizon), traj.rewards.clone()).expect("rewards");
    let actions = traj
        .actions
        .iter()
        .map(|a| Array2::from_shape_vec((1, a.len()), a.clone()).expect("action row"))
        .collect();
    SequenceBatch {
        obs,
        recon_rewards: rewards.clone(),
        rewards,
        actions,
    }
}

/// The model's posterior chain as explicit affine coefficients:
/// z₁ ~ N(M₁x₁ + w₁r₁ + b₁, diag s₁), and for t ≥ 2
/// z_t | z_{t−1} ~ N(F z_{t−1} + M x_t + w r_t + W_a a_{t−1} + b, diag s).
struct AffineChain {
    m1: DMatrix<f64>,
    w1_r: DVector<f64>,
    b1: DVector<f64>,
    s1: DVector<f64>,
    f: DMatrix<f64>,
    m: DMatrix<f64>,
    w_r: DVector<f64>,
    w_a: DMatrix<f64>,
    b: DVector<f64>,
    s: DVector<f64>,
}

fn extract_chain(model: &LatentModel, store: &ParamStore) -> Result<AffineChain> {
    if !model.arch.hidden.is_empty() || model.arch.two_layer {
        return Err(Error::Usage("closed-form elbo requires affine single-block heads".into()));
    }
    let l = model.latent_dim();
    let d = match model.obs {
        ObsSpec::Proprio { d } => d,
        _ => return Err(Error::Usage("closed-form elbo requires vector observations".into())),
    };
    let da = model.action_dim;
    let check_affine = |w: &Array2<f64>, b: &Array2<f64>| -> Result<DVector<f64>> {
        // Log-variance columns must be input-independent and strictly
        // inside the clamp interval for the closed form to be exact.
        for row in w.rows() {
            for j in 0..l {
                if row[l + j].abs() > 1e-12 {
                    return Err(Error::Usage(
                        "closed-form elbo requires constant posterior variances".into(),
                    ));
                }
            }
        }
        let lv = DVector::from_fn(l, |j, _| b[(0, l + j)]);
        for &v in lv.iter() {
            if v <= model.arch.lv_lo || v >= model.arch.lv_hi {
                return Err(Error::Usage("posterior log-variance sits on its clamp".into()));
            }
        }
        Ok(lv.map(f64::exp))
    };

    // The encoder must be the identity for features to equal observations.
    let enc_w = store.get("model.enc.l0.w");
    let enc_b = store.get("model.enc.l0.b");
    for i in 0..d {
        for j in 0..d {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (enc_w[(i, j)] - expect).abs() > 1e-12 || enc_b[(0, j)].abs() > 1e-12 {
                return Err(Error::Usage("closed-form elbo requires an identity encoder".into()));
            }
        }
    }

    let w1 = store.get("model.q1.h.w");
    let bias1 = store.get("model.q1.h.b");
    let s1 = check_affine(w1, bias1)?;
    let m1 = DMatrix::from_fn(l, d, |j, i| w1[(i, j)]);
    let w1_r = DVector::from_fn(l, |j, _| w1[(d, j)]);
    let b1 = DVector::from_fn(l, |j, _| bias1[(0, j)]);

    let wq = store.get("model.q.h.w");
    let biasq = store.get("model.q.h.b");
    let s = check_affine(wq, biasq)?;
    let m = DMatrix::from_fn(l, d, |j, i| wq[(i, j)]);
    let w_r = DVector::from_fn(l, |j, _| wq[(d, j)]);
    let f = DMatrix::from_fn(l, l, |j, k| wq[(d + 1 + k, j)]);
    let w_a = DMatrix::from_fn(l, da, |j, mcol| wq[(d + 1 + l + mcol, j)]);
    let b = DVector::from_fn(l, |j, _| biasq[(0, j)]);

    Ok(AffineChain { m1, w1_r, b1, s1, f, m, w_r, w_a, b, s })
}

/// Closed-form elbo of an affine-posterior model on a linear system: all
/// expectations under the posterior chain are Gaussian integrals, so the
/// bound is computed exactly — no Monte-Carlo error. The generative side
/// (dynamics, decoders, N(0,I) initial prior) is taken from `sys`, which
/// must therefore be a [`standardized_system`].
pub fn analytic_elbo(
    sys: &DiagnosticLgss,
    model: &LatentModel,
    store: &ParamStore,
    traj: &LgssTrajectory,
) -> Result<f64> {
    let l = sys.latent_dim();
    for j in 0..l {
        if sys.stacked.mu0[j] != 0.0 || (sys.stacked.sigma0[(j, j)] - 1.0).abs() > 0.0 {
            return Err(Error::Usage("analytic_elbo needs a standardized initial prior".into()));
        }
    }
    let chain = extract_chain(model, store)?;
    let horizon = traj.observations.len();
    let ys = sys.stack_evidence(traj);
    let c_tilde = &sys.stacked.c;
    let r_tilde: Vec<f64> = (0..=l).map(|i| sys.stacked.r[(i, i)]).collect();
    let q: Vec<f64> = (0..l).map(|j| sys.stacked.q[(j, j)]).collect();
    let a_sys = &sys.stacked.a;
    let b_sys = &sys.stacked.b;

    let mut elbo = 0.0;
    // Posterior marginal of z_t under the affine chain.
    let mut mu = &chain.m1 * DVector::from_vec(traj.observations[0].clone())
        + &chain.w1_r * traj.rewards[0]
        + &chain.b1;
    let mut p = DMatrix::from_diagonal(&chain.s1);

    // KL of the initial posterior against the model's fixed N(0, I).
    let mut kl1 = 0.0;
    for j in 0..l {
        kl1 += 0.5 * (chain.s1[j] + mu[j] * mu[j] - 1.0 - chain.s1[j].ln());
    }
    elbo -= kl1;

    for t in 0..horizon {
        if t > 0 {
            let x = DVector::from_vec(traj.observations[t].clone());
            let act = DVector::from_vec(traj.actions[t - 1].clone());
            let g = &chain.m * x + &chain.w_r * traj.rewards[t] + &chain.w_a * &act + &chain.b;
            // E over z_{t−1} of KL(q(z_t|z_{t−1}) ‖ p(z_t|z_{t−1})):
            // both conditionals have means affine in z_{t−1}.
            let d_mat = &chain.f - a_sys;
            let e_vec = &g - b_sys * &act;
            let resid = &d_mat * &mu + &e_vec;
            let dpd = &d_mat * &p * d_mat.transpose();
            let mut kl = 0.0;
            for j in 0..l {
                kl += chain.s[j] / q[j] - 1.0 + (q[j] / chain.s[j]).ln();
                kl += (resid[j] * resid[j] + dpd[(j, j)]) / q[j];
            }
            elbo -= 0.5 * kl;
            // Advance the posterior marginal.
            mu = &chain.f * &mu + &g;
            p = &chain.f * &p * chain.f.transpose() + DMatrix::from_diagonal(&chain.s);
        }
        // E log p(y_t | z_t) for the stacked emission N(C̃ z, R̃).
        let pred = c_tilde * &mu;
        let cpc = c_tilde * &p * c_tilde.transpose();
        for i in 0..=l {
            let resid = ys[t][i] - pred[i];
            elbo -= 0.5 * (LN_2PI + r_tilde[i].ln() + (resid * resid + cpc[(i, i)]) / r_tilde[i]);
        }
    }
    Ok(elbo)
}

/// Randomly perturb the posterior heads (mean weights and log-variance
/// biases) while keeping variances input-independent, so the perturbed
/// model stays inside the family [`analytic_elbo`] covers.
pub fn perturb_posterior(model: &LatentModel, store: &mut ParamStore, scale: f64, rng: &mut Rng) {
    let l = model.latent_dim();
    for head in ["model.q1.h", "model.q.h"] {
        let mut w = store.get(&format!("{head}.w")).clone();
        for i in 0..w.nrows() {
            for j in 0..l {
                w[(i, j)] += rng.gen_range(-scale..scale);
            }
        }
        store.set(&format!("{head}.w"), w);
        let mut b = store.get(&format!("{head}.b")).clone();
        for j in 0..l {
            b[(0, j)] += rng.gen_range(-scale..scale);
            b[(0, l + j)] = (b[(0, l + j)] + rng.gen_range(-scale..scale)).clamp(-6.0, 2.0);
        }
        store.set(&format!("{head}.b"), b);
    }
}
