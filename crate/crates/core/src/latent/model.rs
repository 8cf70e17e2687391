//! The sequential latent variable model.
//!
//! One hidden chain z_{1:T} carries both physical state and task identity.
//! Five learned pieces, all emitting diagonal Gaussians:
//!
//! - encoder features e(x_t) (convolutional for pixels, dense otherwise)
//! - initial posterior q(z₁ | x₁, r₁)
//! - step posterior q(z_t | x_t, r_t, z_{t−1}, a_{t−1})
//! - latent dynamics p(z_t | z_{t−1}, a_{t−1})
//! - decoders p(x_t | z_t) and p(r_t | z_t)
//!
//! The initial prior p(z₁) = N(0, I) is fixed. Rewards are *evidence*: the
//! posterior nets take the reward as an input, which is what turns state
//! filtering into joint state+task inference.
//!
//! Belief filtering comes in two shapes: a per-step rollout path used while
//! acting ([`LatentModel::infer_initial`] / [`LatentModel::infer_step`]),
//! and an in-graph batched path used by the training objective
//! ([`LatentModel::filter_batch`]). Both run the same forward functions, so
//! acting and training can never disagree about what a belief is.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::envs::ObsSpec;
use crate::error::{Error, Result};
use crate::nn::{conv_stack, ConvDecoderSpec, ConvEncoderSpec, GaussianHeadSpec, Graph, Id, MlpSpec, ParamStore};
use crate::rng::Rng;

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Architecture knobs for the latent model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    /// Latent dimension L.
    pub latent_dim: usize,
    /// Encoder feature width.
    pub feat_dim: usize,
    /// Hidden widths of the posterior/dynamics/decoder torsos; empty means
    /// affine heads directly on the inputs (exactly representable linear
    /// systems use this).
    pub hidden: Vec<usize>,
    /// Channels per stride-2 conv stage (pixel observations only).
    pub conv_channels: Vec<usize>,
    /// Split the latent into two hierarchically conditioned blocks
    /// (z² conditions on z¹ within each step).
    pub two_layer: bool,
    /// Posterior/dynamics log-variance clamp.
    pub lv_lo: f64,
    pub lv_hi: f64,
    /// Decoder log-variance floor/ceiling (variance floor σ²_min).
    pub dec_lv_lo: f64,
    pub dec_lv_hi: f64,
    /// When false, the posterior's reward-evidence input is zeroed — the
    /// ablation that removes task inference while leaving reconstruction
    /// intact.
    pub reward_evidence: bool,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch {
            latent_dim: 64,
            feat_dim: 64,
            hidden: vec![32, 32],
            conv_channels: vec![8, 16, 32],
            two_layer: false,
            lv_lo: -10.0,
            lv_hi: 4.0,
            dec_lv_lo: (1e-3f64).ln(),
            dec_lv_hi: 4.0,
            reward_evidence: true,
        }
    }
}

/// Belief over z_t after conditioning on everything up to t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
    /// The reparameterized sample that continues the filtering chain.
    pub sample: Vec<f64>,
}

impl BeliefState {
    /// Policy/critic input: (mean, log_var) concatenated — the agent sees
    /// the uncertainty, not just a point estimate.
    pub fn feature(&self) -> Vec<f64> {
        let mut f = self.mean.clone();
        f.extend_from_slice(&self.log_var);
        f
    }

    pub fn feature_dim(latent_dim: usize) -> usize {
        2 * latent_dim
    }
}

/// One torso+head Gaussian net; the torso is skipped when `hidden` is
/// empty so the head is a plain affine map.
#[derive(Debug, Clone)]
struct GaussNet {
    torso: Option<MlpSpec>,
    head: GaussianHeadSpec,
    /// Second block for the two-layer option: takes [torso_out, z¹].
    head2: Option<GaussianHeadSpec>,
}

impl GaussNet {
    fn build(name: &str, n_in: usize, n_out: usize, arch: &ModelArch, lv: (f64, f64), split: bool) -> Self {
        let hidden_out = arch.hidden.last().copied();
        let torso = if arch.hidden.is_empty() {
            None
        } else {
            let mut dims = vec![n_in];
            dims.extend_from_slice(&arch.hidden);
            Some(MlpSpec::new(format!("{name}.t"), dims))
        };
        let head_in = hidden_out.unwrap_or(n_in);
        if split && arch.two_layer {
            let l1 = n_out / 2;
            let l2 = n_out - l1;
            GaussNet {
                torso,
                head: GaussianHeadSpec {
                    name: format!("{name}.h1"),
                    n_in: head_in,
                    n_out: l1,
                    lv_lo: lv.0,
                    lv_hi: lv.1,
                },
                head2: Some(GaussianHeadSpec {
                    name: format!("{name}.h2"),
                    n_in: head_in + l1,
                    n_out: l2,
                    lv_lo: lv.0,
                    lv_hi: lv.1,
                }),
            }
        } else {
            GaussNet {
                torso,
                head: GaussianHeadSpec {
                    name: format!("{name}.h"),
                    n_in: head_in,
                    n_out,
                    lv_lo: lv.0,
                    lv_hi: lv.1,
                },
                head2: None,
            }
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        if let Some(t) = &self.torso {
            t.init(store, rng);
        }
        self.head.init(store, rng);
        if let Some(h2) = &self.head2 {
            h2.init(store, rng);
        }
    }

    fn trunk(&self, g: &mut Graph, store: &ParamStore, frozen: bool, x: Id) -> Id {
        match &self.torso {
            Some(t) => {
                let h = t.forward(g, store, frozen, x);
                g.relu(h)
            }
            None => x,
        }
    }
}

/// Distribution emitted by a model component, possibly with a sampled
/// value when the caller provided reparameterization noise.
pub struct GaussNodes {
    pub mean: Id,
    pub log_var: Id,
}

/// Per-step nodes produced by batched filtering.
pub struct FilterNodes {
    /// Posterior (mean, log_var) per record, each (B, L).
    pub posts: Vec<GaussNodes>,
    /// Reparameterized samples z_t, each (B, L).
    pub samples: Vec<Id>,
    /// Per-record KL contribution, (B, 1): t=1 against N(0,I), t ≥ 2
    /// against the latent dynamics.
    pub kls: Vec<Id>,
}

#[derive(Debug, Clone)]
pub struct LatentModel {
    pub arch: ModelArch,
    pub obs: ObsSpec,
    /// Action input width — callers append the episode-boundary flag
    /// before the model ever sees an action.
    pub action_dim: usize,
    enc_conv: Option<ConvEncoderSpec>,
    enc_mlp: Option<MlpSpec>,
    q1: GaussNet,
    q: GaussNet,
    dynamics: GaussNet,
    dec_conv: Option<ConvDecoderSpec>,
    dec_mlp: Option<GaussNet>,
    rdec: GaussNet,
}

impl LatentModel {
    pub fn new(arch: ModelArch, obs: ObsSpec, action_dim: usize) -> Self {
        let l = arch.latent_dim;
        let feat = arch.feat_dim;
        let (enc_conv, enc_mlp, dec_conv, dec_mlp) = match obs {
            ObsSpec::Pixels { h, w, c } => {
                let stages: Vec<(usize, usize, usize, usize)> =
                    arch.conv_channels.iter().map(|&ch| (ch, 3, 2, 1)).collect();
                let cfgs = conv_stack(h, w, c, &stages);
                (
                    Some(ConvEncoderSpec {
                        name: "model.enc".into(),
                        stages: cfgs.clone(),
                        n_out: feat,
                    }),
                    None,
                    Some(ConvDecoderSpec {
                        name: "model.dec".into(),
                        stages: cfgs,
                        n_in: l,
                        lv_lo: arch.dec_lv_lo,
                        lv_hi: arch.dec_lv_hi,
                    }),
                    None,
                )
            }
            ObsSpec::Proprio { d } => {
                let enc = if arch.hidden.is_empty() {
                    MlpSpec::new("model.enc", vec![d, feat])
                } else {
                    let mut dims = vec![d];
                    dims.extend_from_slice(&arch.hidden);
                    dims.push(feat);
                    MlpSpec::new("model.enc", dims)
                };
                let dec = GaussNet::build(
                    "model.dec",
                    l,
                    d,
                    &arch,
                    (arch.dec_lv_lo, arch.dec_lv_hi),
                    false,
                );
                (None, Some(enc), None, Some(dec))
            }
        };
        let q1 = GaussNet::build("model.q1", feat + 1, l, &arch, (arch.lv_lo, arch.lv_hi), true);
        let q = GaussNet::build(
            "model.q",
            feat + 1 + l + action_dim,
            l,
            &arch,
            (arch.lv_lo, arch.lv_hi),
            true,
        );
        let dynamics = GaussNet::build(
            "model.dyn",
            l + action_dim,
            l,
            &arch,
            (arch.lv_lo, arch.lv_hi),
            true,
        );
        let rdec = GaussNet::build("model.rdec", l, 1, &arch, (arch.dec_lv_lo, arch.dec_lv_hi), false);
        LatentModel {
            arch,
            obs,
            action_dim,
            enc_conv,
            enc_mlp,
            q1,
            q,
            dynamics,
            dec_conv,
            dec_mlp,
            rdec,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// Register every model parameter (all under the `model.` prefix).
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        if let Some(e) = &self.enc_conv {
            e.init(store, rng);
        }
        if let Some(e) = &self.enc_mlp {
            e.init(store, rng);
        }
        self.q1.init(store, rng);
        self.q.init(store, rng);
        self.dynamics.init(store, rng);
        if let Some(d) = &self.dec_conv {
            d.init(store, rng);
        }
        if let Some(d) = &self.dec_mlp {
            d.init(store, rng);
        }
        self.rdec.init(store, rng);
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, frozen: bool, x: Id) -> Id {
        match (&self.enc_conv, &self.enc_mlp) {
            (Some(conv), _) => conv.forward(g, store, frozen, x),
            (_, Some(mlp)) => mlp.forward(g, store, frozen, x),
            _ => unreachable!("model built without an encoder"),
        }
    }

    /// Reward value as posterior evidence: zeroed under the
    /// reward-evidence ablation.
    fn evidence(&self, g: &mut Graph, r: Id) -> Id {
        if self.arch.reward_evidence {
            r
        } else {
            g.scale(r, 0.0)
        }
    }

    fn gauss_forward(&self, net: &GaussNet, g: &mut Graph, store: &ParamStore, frozen: bool, x: Id, eps: Id) -> (GaussNodes, Id) {
        let trunk = net.trunk(g, store, frozen, x);
        let (m1, lv1) = net.head.forward(g, store, frozen, trunk);
        match &net.head2 {
            None => {
                let z = sample_diag(g, m1, lv1, eps);
                (GaussNodes { mean: m1, log_var: lv1 }, z)
            }
            Some(h2) => {
                // Hierarchical block: z¹ sampled, z² conditioned on z¹.
                let l1 = net.head.n_out;
                let eps1 = g.slice_cols(eps, 0, l1);
                let z1 = sample_diag(g, m1, lv1, eps1);
                let in2 = g.concat_cols(&[trunk, z1]);
                let (m2, lv2) = h2.forward(g, store, frozen, in2);
                let eps2 = g.slice_cols(eps, l1, h2.n_out);
                let z2 = sample_diag(g, m2, lv2, eps2);
                let mean = g.concat_cols(&[m1, m2]);
                let log_var = g.concat_cols(&[lv1, lv2]);
                let z = g.concat_cols(&[z1, z2]);
                (GaussNodes { mean, log_var }, z)
            }
        }
    }

    /// q(z₁ | x₁, r₁): returns posterior nodes and the sampled z₁.
    pub fn posterior_initial(&self, g: &mut Graph, store: &ParamStore, frozen: bool, x: Id, r: Id, eps: Id) -> (GaussNodes, Id) {
        let feat = self.encode(g, store, frozen, x);
        let r = self.evidence(g, r);
        let input = g.concat_cols(&[feat, r]);
        self.gauss_forward(&self.q1, g, store, frozen, input, eps)
    }

    /// q(z_t | x_t, r_t, z_{t−1}, a_{t−1}).
    pub fn posterior_step(&self, g: &mut Graph, store: &ParamStore, frozen: bool, x: Id, r: Id, z_prev: Id, a_prev: Id, eps: Id) -> (GaussNodes, Id) {
        let feat = self.encode(g, store, frozen, x);
        let r = self.evidence(g, r);
        let input = g.concat_cols(&[feat, r, z_prev, a_prev]);
        self.gauss_forward(&self.q, g, store, frozen, input, eps)
    }

    /// Latent dynamics p(z_t | z_{t−1}, a_{t−1}).
    pub fn dynamics_predict(&self, g: &mut Graph, store: &ParamStore, frozen: bool, z_prev: Id, a_prev: Id) -> GaussNodes {
        let input = g.concat_cols(&[z_prev, a_prev]);
        let net = &self.dynamics;
        let trunk = net.trunk(g, store, frozen, input);
        let (m1, lv1) = net.head.forward(g, store, frozen, trunk);
        match &net.head2 {
            None => GaussNodes { mean: m1, log_var: lv1 },
            Some(h2) => {
                // Prior over z² conditions on the prior MEAN of z¹ (no
                // sample available without evidence); keeps the prior a
                // deterministic function of (z_{t−1}, a_{t−1}).
                let in2 = g.concat_cols(&[trunk, m1]);
                let (m2, lv2) = h2.forward(g, store, frozen, in2);
                let mean = g.concat_cols(&[m1, m2]);
                let log_var = g.concat_cols(&[lv1, lv2]);
                GaussNodes { mean, log_var }
            }
        }
    }

    /// p(x_t | z_t) as (mean, log_var) nodes.
    pub fn decode_obs(&self, g: &mut Graph, store: &ParamStore, frozen: bool, z: Id) -> GaussNodes {
        match (&self.dec_conv, &self.dec_mlp) {
            (Some(conv), _) => {
                let (mean, log_var) = conv.forward(g, store, frozen, z);
                GaussNodes { mean, log_var }
            }
            (_, Some(net)) => {
                let trunk = net.trunk(g, store, frozen, z);
                let (mean, log_var) = net.head.forward(g, store, frozen, trunk);
                GaussNodes { mean, log_var }
            }
            _ => unreachable!("model built without a decoder"),
        }
    }

    /// p(r_t | z_t): scalar mean and log-variance — the uncertainty signal
    /// that exposes task identification progress.
    pub fn decode_reward(&self, g: &mut Graph, store: &ParamStore, frozen: bool, z: Id) -> GaussNodes {
        let net = &self.rdec;
        let trunk = net.trunk(g, store, frozen, z);
        let (mean, log_var) = net.head.forward(g, store, frozen, trunk);
        GaussNodes { mean, log_var }
    }

    /// Batched filtering pass over an aligned sequence batch, building
    /// posterior, sample, and KL nodes for every record.
    ///
    /// `obs[t]` is (B, obs_len); `rewards` is (B, T) — the EVIDENCE
    /// channel; `actions[t]` is (B, action_dim) for the action taken
    /// before record t+2; `eps[t]` is (B, L) reparameterization noise.
    pub fn filter_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frozen: bool,
        obs: &[Array2<f64>],
        rewards: &Array2<f64>,
        actions: &[Array2<f64>],
        eps: &[Array2<f64>],
    ) -> FilterNodes {
        let horizon = obs.len();
        assert_eq!(actions.len() + 1, horizon, "need T−1 actions");
        assert_eq!(eps.len(), horizon, "need T noise draws");
        assert_eq!(rewards.ncols(), horizon, "need T rewards");
        let mut out = FilterNodes {
            posts: Vec::with_capacity(horizon),
            samples: Vec::with_capacity(horizon),
            kls: Vec::with_capacity(horizon),
        };
        let mut z_prev: Option<Id> = None;
        for t in 0..horizon {
            let x = g.constant(obs[t].clone());
            let r = g.constant(rewards.column(t).to_owned().insert_axis(ndarray::Axis(1)).into_owned());
            let e = g.constant(eps[t].clone());
            let (post, z) = match z_prev {
                None => self.posterior_initial(g, store, frozen, x, r, e),
                Some(zp) => {
                    let a = g.constant(actions[t - 1].clone());
                    self.posterior_step(g, store, frozen, x, r, zp, a, e)
                }
            };
            let kl = match z_prev {
                None => kl_std_normal(g, post.mean, post.log_var),
                Some(zp) => {
                    let a = g.constant(actions[t - 1].clone());
                    let prior = self.dynamics_predict(g, store, frozen, zp, a);
                    kl_diag(g, post.mean, post.log_var, prior.mean, prior.log_var)
                }
            };
            out.posts.push(post);
            out.samples.push(z);
            out.kls.push(kl);
            z_prev = Some(z);
        }
        out
    }

    // ---- rollout path (single row, forward only) ----

    /// b₁ from the first observation and reward.
    pub fn infer_initial(&self, store: &ParamStore, x1: &[f64], r1: f64, eps: &[f64]) -> Result<BeliefState> {
        let mut g = Graph::new();
        let x = g.constant(row(x1));
        let r = g.constant(Array2::from_elem((1, 1), r1));
        let e = g.constant(row(eps));
        let (post, z) = self.posterior_initial(&mut g, store, true, x, r, e);
        self.extract_belief(&g, post, z, "model.q1")
    }

    /// b_t from b_{t−1}, the new evidence, and the previous action (with
    /// its boundary flag already appended).
    pub fn infer_step(&self, store: &ParamStore, prev: &BeliefState, x: &[f64], r: f64, a_prev: &[f64], eps: &[f64]) -> Result<BeliefState> {
        if a_prev.len() != self.action_dim {
            return Err(Error::Usage(format!(
                "infer_step: action width {} (expected {})",
                a_prev.len(),
                self.action_dim
            )));
        }
        let mut g = Graph::new();
        let x = g.constant(row(x));
        let r = g.constant(Array2::from_elem((1, 1), r));
        let zp = g.constant(row(&prev.sample));
        let a = g.constant(row(a_prev));
        let e = g.constant(row(eps));
        let (post, z) = self.posterior_step(&mut g, store, true, x, r, zp, a, e);
        self.extract_belief(&g, post, z, "model.q")
    }

    fn extract_belief(&self, g: &Graph, post: GaussNodes, z: Id, site: &str) -> Result<BeliefState> {
        g.check_finite(post.mean, &format!("{site}.mean"))?;
        g.check_finite(post.log_var, &format!("{site}.log_var"))?;
        Ok(BeliefState {
            mean: g.value(post.mean).row(0).to_vec(),
            log_var: g.value(post.log_var).row(0).to_vec(),
            sample: g.value(z).row(0).to_vec(),
        })
    }

    /// Reward-decoder (mean, variance) at a belief sample — the trained
    /// model's task-uncertainty diagnostic.
    pub fn reward_prediction(&self, store: &ParamStore, z: &[f64]) -> (f64, f64) {
        let mut g = Graph::new();
        let zn = g.constant(row(z));
        let nodes = self.decode_reward(&mut g, store, true, zn);
        (
            g.value(nodes.mean)[(0, 0)],
            g.value(nodes.log_var)[(0, 0)].exp(),
        )
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row build")
}

/// z = mean + exp(log_var/2) ⊙ ε.
pub fn sample_diag(g: &mut Graph, mean: Id, log_var: Id, eps: Id) -> Id {
    let half = g.scale(log_var, 0.5);
    let std = g.exp(half);
    let scaled = g.mul(std, eps);
    g.add(mean, scaled)
}

/// KL(N(m, diag e^lv) ‖ N(0, I)) per row → (B, 1).
pub fn kl_std_normal(g: &mut Graph, mean: Id, log_var: Id) -> Id {
    let var = g.exp(log_var);
    let m2 = g.square(mean);
    let sum = g.add(var, m2);
    let sum = g.sub(sum, log_var);
    let sum = g.add_const(sum, -1.0);
    let rowsum = g.sum_rows(sum);
    g.scale(rowsum, 0.5)
}

/// KL(N(m0, diag e^lv0) ‖ N(m1, diag e^lv1)) per row → (B, 1).
pub fn kl_diag(g: &mut Graph, m0: Id, lv0: Id, m1: Id, lv1: Id) -> Id {
    let dlv = g.sub(lv1, lv0);
    let neg_dlv = g.scale(dlv, -1.0);
    let ratio_exp = g.exp(neg_dlv); // e^{lv0 − lv1}
    let dm = g.sub(m0, m1);
    let dm2 = g.square(dm);
    let neg_lv1 = g.scale(lv1, -1.0);
    let inv_var1 = g.exp(neg_lv1);
    let quad = g.mul(dm2, inv_var1);
    let sum = g.add(dlv, ratio_exp);
    let sum = g.add(sum, quad);
    let sum = g.add_const(sum, -1.0);
    let rowsum = g.sum_rows(sum);
    g.scale(rowsum, 0.5)
}

/// log N(x; mean, diag e^lv) per row → (B, 1).
pub fn diag_log_density(g: &mut Graph, x: Id, mean: Id, log_var: Id) -> Id {
    let d = g.sub(x, mean);
    let d2 = g.square(d);
    let neg_lv = g.scale(log_var, -1.0);
    let inv_var = g.exp(neg_lv);
    let quad = g.mul(d2, inv_var);
    let sum = g.add(quad, log_var);
    let sum = g.add_const(sum, LN_2PI);
    let rowsum = g.sum_rows(sum);
    g.scale(rowsum, -0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::gaussian_kl;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;

    fn tiny_model(two_layer: bool) -> (LatentModel, ParamStore) {
        let arch = ModelArch {
            latent_dim: 4,
            feat_dim: 5,
            hidden: vec![8],
            conv_channels: vec![],
            two_layer,
            ..ModelArch::default()
        };
        let model = LatentModel::new(arch, ObsSpec::Proprio { d: 3 }, 2);
        let mut store = ParamStore::new();
        let mut rng = stream(0, "model-init");
        model.init(&mut store, &mut rng);
        (model, store)
    }

    #[test]
    fn kl_nodes_match_oracle() {
        let mut rng = stream(1, "kl");
        for _ in 0..20 {
            let m0: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lv0: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..1.0)).collect();
            let m1: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lv1: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..1.0)).collect();
            let mut g = Graph::new();
            let (a, b, c, d) = (
                g.constant(row(&m0)),
                g.constant(row(&lv0)),
                g.constant(row(&m1)),
                g.constant(row(&lv1)),
            );
            let kl = kl_diag(&mut g, a, b, c, d);
            let v0: Vec<f64> = lv0.iter().map(|x| x.exp()).collect();
            let v1: Vec<f64> = lv1.iter().map(|x| x.exp()).collect();
            let expected = gaussian_kl(&m0, &v0, &m1, &v1).unwrap();
            assert_abs_diff_eq!(g.value(kl)[(0, 0)], expected, epsilon = 1e-12);

            let mut g2 = Graph::new();
            let (a, b) = (g2.constant(row(&m0)), g2.constant(row(&lv0)));
            let kl0 = kl_std_normal(&mut g2, a, b);
            let expected0 = gaussian_kl(&m0, &v0, &[0.0; 3], &[1.0; 3]).unwrap();
            assert_abs_diff_eq!(g2.value(kl0)[(0, 0)], expected0, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_density_node_matches_oracle() {
        let mut g = Graph::new();
        let x = g.constant(row(&[0.7, -0.3]));
        let m = g.constant(row(&[0.5, 0.1]));
        let lv = g.constant(row(&[0.2, -0.4]));
        let ld = diag_log_density(&mut g, x, m, lv);
        let expected = crate::oracles::diag_gaussian_log_density(
            &[0.7, -0.3],
            &[0.5, 0.1],
            &[0.2_f64.exp(), (-0.4_f64).exp()],
        );
        assert_abs_diff_eq!(g.value(ld)[(0, 0)], expected, epsilon = 1e-12);
    }

    #[test]
    fn zeroed_network_gives_standard_normal_belief() {
        let (model, mut store) = tiny_model(false);
        for (_, v) in store.iter_mut() {
            v.fill(0.0);
        }
        let b = model
            .infer_initial(&store, &[0.4, -0.2, 0.9], 1.3, &[0.0; 4])
            .unwrap();
        assert_eq!(b.mean, vec![0.0; 4]);
        assert_eq!(b.log_var, vec![0.0; 4]);
        assert_eq!(b.sample, vec![0.0; 4]);
        let b2 = model
            .infer_step(&store, &b, &[0.0, 0.0, 0.0], 0.0, &[0.1, 0.2], &[0.0; 4])
            .unwrap();
        assert_eq!(b2.mean, vec![0.0; 4]);
        assert_eq!(b2.log_var, vec![0.0; 4]);
    }

    #[test]
    fn inference_is_deterministic_given_noise() {
        let (model, store) = tiny_model(false);
        let eps = [0.3, -0.5, 0.1, 0.9];
        let b1 = model.infer_initial(&store, &[0.4, -0.2, 0.9], 1.3, &eps).unwrap();
        let b2 = model.infer_initial(&store, &[0.4, -0.2, 0.9], 1.3, &eps).unwrap();
        assert_eq!(b1, b2);
        let s1 = model
            .infer_step(&store, &b1, &[0.1, 0.1, 0.1], -0.2, &[0.5, 0.0], &eps)
            .unwrap();
        let s2 = model
            .infer_step(&store, &b1, &[0.1, 0.1, 0.1], -0.2, &[0.5, 0.0], &eps)
            .unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn sample_is_reparameterized_from_noise() {
        let (model, store) = tiny_model(false);
        let b = model
            .infer_initial(&store, &[0.4, -0.2, 0.9], 1.3, &[1.0, 0.0, -1.0, 2.0])
            .unwrap();
        for i in 0..4 {
            let expected = b.mean[i] + (0.5 * b.log_var[i]).exp() * [1.0, 0.0, -1.0, 2.0][i];
            assert_abs_diff_eq!(b.sample[i], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn belief_feature_is_mean_then_log_var() {
        let b = BeliefState {
            mean: vec![1.0, 2.0],
            log_var: vec![-0.5, 0.5],
            sample: vec![0.0, 0.0],
        };
        assert_eq!(b.feature(), vec![1.0, 2.0, -0.5, 0.5]);
        assert_eq!(BeliefState::feature_dim(2), 4);
    }

    #[test]
    fn reward_evidence_ablation_blocks_reward_input() {
        let (model, store) = tiny_model(false);
        let mut ablated = model.clone();
        ablated.arch.reward_evidence = false;
        let eps = [0.0; 4];
        // Full model: reward value moves the belief.
        let b_a = model.infer_initial(&store, &[0.1, 0.2, 0.3], 0.0, &eps).unwrap();
        let b_b = model.infer_initial(&store, &[0.1, 0.2, 0.3], 5.0, &eps).unwrap();
        assert_ne!(b_a.mean, b_b.mean);
        // Ablated model: reward value is invisible.
        let c_a = ablated.infer_initial(&store, &[0.1, 0.2, 0.3], 0.0, &eps).unwrap();
        let c_b = ablated.infer_initial(&store, &[0.1, 0.2, 0.3], 5.0, &eps).unwrap();
        assert_eq!(c_a.mean, c_b.mean);
    }

    #[test]
    fn filtering_causality_under_input_mutation() {
        // b_t must not depend on any input later than t.
        let (model, store) = tiny_model(false);
        let mut rng = stream(7, "causality");
        let draw = |rng: &mut crate::rng::Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let xs: Vec<Vec<f64>> = (0..4).map(|_| draw(&mut rng, 3)).collect();
        let rs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let acts: Vec<Vec<f64>> = (0..3).map(|_| draw(&mut rng, 2)).collect();
        let eps: Vec<Vec<f64>> = (0..4).map(|_| draw(&mut rng, 4)).collect();
        let run_prefix = |upto: usize, xs: &[Vec<f64>], rs: &[f64]| {
            let mut b = model.infer_initial(&store, &xs[0], rs[0], &eps[0]).unwrap();
            for t in 1..=upto {
                b = model
                    .infer_step(&store, &b, &xs[t], rs[t], &acts[t - 1], &eps[t])
                    .unwrap();
            }
            b
        };
        let b2 = run_prefix(2, &xs, &rs);
        let mut xs_mut = xs.clone();
        xs_mut[3] = vec![9.0, 9.0, 9.0];
        let mut rs_mut = rs.to_vec();
        rs_mut[3] = -9.0;
        let b2_again = run_prefix(2, &xs_mut, &rs_mut);
        assert_eq!(b2, b2_again);
    }

    #[test]
    fn two_layer_option_runs_and_samples_full_latent() {
        let (model, store) = tiny_model(true);
        let b = model
            .infer_initial(&store, &[0.4, -0.2, 0.9], 1.3, &[0.1, 0.2, 0.3, 0.4])
            .unwrap();
        assert_eq!(b.mean.len(), 4);
        assert_eq!(b.log_var.len(), 4);
        assert_eq!(b.sample.len(), 4);
        let b2 = model
            .infer_step(&store, &b, &[0.0, 0.1, 0.2], 0.5, &[0.3, 1.0], &[0.0; 4])
            .unwrap();
        assert_eq!(b2.mean.len(), 4);
    }

    #[test]
    fn batched_filter_matches_rollout_path() {
        let (model, store) = tiny_model(false);
        let mut rng = stream(3, "batch-vs-rollout");
        let horizon = 4;
        let batch = 3;
        let obs: Vec<Array2<f64>> = (0..horizon)
            .map(|_| Array2::from_shape_fn((batch, 3), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let rewards = Array2::from_shape_fn((batch, horizon), |_| rng.gen_range(-1.0..1.0));
        let actions: Vec<Array2<f64>> = (0..horizon - 1)
            .map(|_| Array2::from_shape_fn((batch, 2), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let eps: Vec<Array2<f64>> = (0..horizon)
            .map(|_| Array2::from_shape_fn((batch, 4), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let mut g = Graph::new();
        let nodes = model.filter_batch(&mut g, &store, true, &obs, &rewards, &actions, &eps);

        // Row 1 of the batch, replayed through the rollout path.
        let row_idx = 1;
        let mut b = model
            .infer_initial(
                &store,
                &obs[0].row(row_idx).to_vec(),
                rewards[(row_idx, 0)],
                &eps[0].row(row_idx).to_vec(),
            )
            .unwrap();
        for t in 1..horizon {
            assert_abs_diff_eq!(
                g.value(nodes.posts[t - 1].mean).row(row_idx).to_vec()[0],
                b.mean[0],
                epsilon = 1e-12
            );
            b = model
                .infer_step(
                    &store,
                    &b,
                    &obs[t].row(row_idx).to_vec(),
                    rewards[(row_idx, t)],
                    &actions[t - 1].row(row_idx).to_vec(),
                    &eps[t].row(row_idx).to_vec(),
                )
                .unwrap();
        }
        let last = g.value(nodes.posts[horizon - 1].mean).row(row_idx).to_vec();
        for i in 0..4 {
            assert_abs_diff_eq!(last[i], b.mean[i], epsilon = 1e-12);
        }
    }
}
