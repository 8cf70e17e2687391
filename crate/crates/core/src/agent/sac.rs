//! Belief-conditioned soft actor-critic.
//!
//! The policy and critics never see raw observations: their input is the
//! belief feature (posterior mean ‖ log-variance) produced by the latent
//! model, handed over as plain values so agent gradients cannot reach
//! model parameters. Actions are tanh-squashed Gaussians; twin critics
//! with Polyak-averaged targets and a learned temperature complete the
//! standard recipe.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::model::LN_2PI;
use crate::nn::{Adam, GaussianHeadSpec, Graph, Id, MlpSpec, ParamStore};
use crate::rng::Rng;

const LN_2: f64 = std::f64::consts::LN_2;

/// Agent hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    /// Torso widths for actor and critics.
    pub hidden: Vec<usize>,
    /// Discount.
    pub gamma: f64,
    /// Polyak coefficient: target ← τ·critic + (1−τ)·target.
    pub tau: f64,
    /// Clamp on the policy's log standard deviation.
    pub log_std_lo: f64,
    pub log_std_hi: f64,
    /// Entropy target for the learned temperature; `None` means −action_dim.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![256, 256],
            gamma: 0.99,
            tau: 0.005,
            log_std_lo: -5.0,
            log_std_hi: 2.0,
            target_entropy: None,
        }
    }
}

/// One flat batch of belief-space transitions.
#[derive(Debug, Clone)]
pub struct AgentBatch {
    /// (B, feat_dim) belief features at t.
    pub features: Array2<f64>,
    /// (B, action_dim) actions taken (raw environment actions).
    pub actions: Array2<f64>,
    /// (B, 1) rewards used for the critic (the shaped channel).
    pub rewards: Array2<f64>,
    /// (B, feat_dim) belief features at t+1.
    pub next_features: Array2<f64>,
    /// (B, 1) ∈ {0, 1}: 1 only where no bootstrapping should occur.
    pub done: Array2<f64>,
}

impl AgentBatch {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, agent: &SacAgent) -> Result<()> {
        let b = self.len();
        let checks = [
            ("features", self.features.dim(), (b, agent.feat_dim)),
            ("actions", self.actions.dim(), (b, agent.action_dim)),
            ("rewards", self.rewards.dim(), (b, 1)),
            ("next_features", self.next_features.dim(), (b, agent.feat_dim)),
            ("done", self.done.dim(), (b, 1)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Usage(format!(
                    "agent batch field {name} is {got:?}, expected {want:?}"
                )));
            }
        }
        if b == 0 {
            return Err(Error::Usage("agent batch is empty".into()));
        }
        Ok(())
    }
}

/// Loss values from one agent update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentDiagnostics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature_loss: f64,
    pub alpha: f64,
    /// Sample estimate of the policy entropy, −E[log π].
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub feat_dim: usize,
    pub action_dim: usize,
    actor_torso: Option<MlpSpec>,
    actor_head: GaussianHeadSpec,
    critics: [MlpSpec; 2],
}

impl SacAgent {
    pub fn new(cfg: SacConfig, feat_dim: usize, action_dim: usize) -> Self {
        let hidden = cfg.hidden.clone();
        let torso = if hidden.is_empty() {
            None
        } else {
            let mut dims = vec![feat_dim];
            dims.extend_from_slice(&hidden);
            Some(MlpSpec::new("actor.t", dims))
        };
        let head_in = hidden.last().copied().unwrap_or(feat_dim);
        let actor_head = GaussianHeadSpec {
            name: "actor.h".into(),
            n_in: head_in,
            n_out: action_dim,
            lv_lo: cfg.log_std_lo,
            lv_hi: cfg.log_std_hi,
        };
        let critic = |name: &str| {
            let mut dims = vec![feat_dim + action_dim];
            dims.extend_from_slice(&hidden);
            dims.push(1);
            MlpSpec::new(name, dims)
        };
        let critics = [critic("critic.q1"), critic("critic.q2")];
        SacAgent {
            cfg,
            feat_dim,
            action_dim,
            actor_torso: torso,
            actor_head,
            critics,
        }
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    /// Register actor, critics, target copies, and the temperature.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        if let Some(t) = &self.actor_torso {
            t.init(store, rng);
        }
        self.actor_head.init(store, rng);
        for c in &self.critics {
            c.init(store, rng);
        }
        store.copy_prefix("critic.", "target.");
        store.insert("temp.log_alpha", Array2::zeros((1, 1)));
    }

    /// Policy head: (mean, clamped log-std) at a batch of features.
    pub fn actor_forward(&self, g: &mut Graph, store: &ParamStore, frozen: bool, feat: Id) -> (Id, Id) {
        let trunk = match &self.actor_torso {
            Some(t) => {
                let h = t.forward(g, store, frozen, feat);
                g.relu(h)
            }
            None => feat,
        };
        self.actor_head.forward(g, store, frozen, trunk)
    }

    /// Sample a = tanh(mean + std·ε) with its log-probability, using the
    /// numerically stable squash correction
    /// log(1 − tanh(u)²) = 2(ln 2 − u − softplus(−2u)).
    pub fn sample_action(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frozen: bool,
        feat: Id,
        eps: &Array2<f64>,
    ) -> (Id, Id) {
        let (mean, log_std) = self.actor_forward(g, store, frozen, feat);
        let std = g.exp(log_std);
        let eps_node = g.constant(eps.clone());
        let noise = g.mul(std, eps_node);
        let u = g.add(mean, noise);
        let action = g.tanh(u);
        // log N(u; mean, std) per dim = −½ln2π − log_std − ½ε².
        let base = g.constant(eps.mapv(|e| -0.5 * LN_2PI - 0.5 * e * e));
        let log_normal = g.sub(base, log_std);
        let log_normal = g.sum_rows(log_normal);
        // Squash correction per dim: 2(ln2 − u − softplus(−2u)).
        let neg2u = g.scale(u, -2.0);
        let sp = g.softplus(neg2u);
        let term = g.add(u, sp);
        let term = g.scale(term, -1.0);
        let term = g.add_const(term, LN_2);
        let corr = g.sum_rows(term);
        let corr = g.scale(corr, 2.0);
        let log_prob = g.sub(log_normal, corr);
        (action, log_prob)
    }

    /// Q(s, a) for one critic (`prefix` is "critic" or "target").
    pub fn critic_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frozen: bool,
        prefix: &str,
        which: usize,
        feat: Id,
        action: Id,
    ) -> Id {
        let input = g.concat_cols(&[feat, action]);
        let spec = &self.critics[which];
        let name = spec.name.replace("critic.", &format!("{prefix}."));
        let renamed = MlpSpec::new(name, spec.dims.clone());
        renamed.forward(g, store, frozen, input)
    }

    fn min_q(&self, g: &mut Graph, store: &ParamStore, frozen: bool, prefix: &str, feat: Id, action: Id) -> Id {
        let q1 = self.critic_forward(g, store, frozen, prefix, 0, feat, action);
        let q2 = self.critic_forward(g, store, frozen, prefix, 1, feat, action);
        g.min(q1, q2)
    }

    fn alpha_node(&self, g: &mut Graph, store: &ParamStore, frozen: bool) -> Id {
        let log_alpha = if frozen {
            g.param_frozen(store, "temp.log_alpha")
        } else {
            g.param(store, "temp.log_alpha")
        };
        g.exp(log_alpha)
    }

    /// Bellman targets y = r + γ(1−done)(min Q̄(s′, ã′) − α log π(ã′|s′)),
    /// built from frozen parameters and detached.
    fn target_nodes(&self, g: &mut Graph, store: &ParamStore, batch: &AgentBatch, eps_next: &Array2<f64>) -> Id {
        let next_feat = g.constant(batch.next_features.clone());
        let (next_action, next_logp) = self.sample_action(g, store, true, next_feat, eps_next);
        let q_min = self.min_q(g, store, true, "target", next_feat, next_action);
        let alpha = self.alpha_node(g, store, true);
        let ent_term = g.mul(next_logp, alpha); // (B,1)·(1,1) broadcast
        let soft_q = g.sub(q_min, ent_term);
        let not_done = {
            let d = g.constant(batch.done.clone());
            let neg = g.scale(d, -1.0);
            g.add_const(neg, 1.0)
        };
        let masked = g.mul(not_done, soft_q);
        let discounted = g.scale(masked, self.cfg.gamma);
        let r = g.constant(batch.rewards.clone());
        let y = g.add(r, discounted);
        g.detach(y)
    }

    /// Bellman target values (test/diagnostic view of the targets the
    /// critic regresses toward).
    pub fn critic_targets(&self, store: &ParamStore, batch: &AgentBatch, eps_next: &Array2<f64>) -> Result<Array2<f64>> {
        batch.validate(self)?;
        let mut g = Graph::new();
        let y = self.target_nodes(&mut g, store, batch, eps_next);
        g.check_finite(y, "agent.targets")?;
        Ok(g.value(y).clone())
    }

    /// Twin-critic regression loss against the soft Bellman targets.
    pub fn critic_loss(
        &self,
        store: &ParamStore,
        batch: &AgentBatch,
        eps_next: &Array2<f64>,
    ) -> Result<(Graph, Id)> {
        batch.validate(self)?;
        let mut g = Graph::new();
        let y = self.target_nodes(&mut g, store, batch, eps_next);
        let feat = g.constant(batch.features.clone());
        let action = g.constant(batch.actions.clone());
        let q1 = self.critic_forward(&mut g, store, false, "critic", 0, feat, action);
        let q2 = self.critic_forward(&mut g, store, false, "critic", 1, feat, action);
        let l1 = g.mse(q1, y);
        let l2 = g.mse(q2, y);
        let loss = g.add(l1, l2);
        g.check_finite(loss, "agent.critic_loss")?;
        Ok((g, loss))
    }

    /// Policy loss E[α·log π(ã|s) − min Q(s, ã)] with the critics and the
    /// temperature frozen; returns the sampled log-probabilities for the
    /// temperature update.
    pub fn actor_loss(
        &self,
        store: &ParamStore,
        features: &Array2<f64>,
        eps: &Array2<f64>,
    ) -> Result<(Graph, Id, Array2<f64>)> {
        let mut g = Graph::new();
        let feat = g.constant(features.clone());
        let (action, log_prob) = self.sample_action(&mut g, store, false, feat, eps);
        let q_min = self.min_q(&mut g, store, true, "critic", feat, action);
        let alpha = self.alpha_node(&mut g, store, true);
        let ent = g.mul(log_prob, alpha);
        let gap = g.sub(ent, q_min);
        let loss = g.mean(gap);
        g.check_finite(loss, "agent.actor_loss")?;
        let logp = g.value(log_prob).clone();
        Ok((g, loss, logp))
    }

    /// Temperature loss −E[log α · (log π + H̄)] over detached
    /// log-probabilities: gradient descent raises α when entropy falls
    /// short of the target H̄ and lowers it when entropy is plentiful.
    pub fn temperature_loss(&self, store: &ParamStore, log_probs: &Array2<f64>) -> Result<(Graph, Id)> {
        let mut g = Graph::new();
        let log_alpha = g.param(store, "temp.log_alpha");
        let drive = g.constant(log_probs.mapv(|lp| lp + self.target_entropy()));
        let prod = g.mul(drive, log_alpha);
        let mean = g.mean(prod);
        let loss = g.scale(mean, -1.0);
        g.check_finite(loss, "agent.temperature_loss")?;
        Ok((g, loss))
    }

    /// target ← τ·critic + (1−τ)·target.
    pub fn polyak_update(&self, store: &mut ParamStore, tau: f64) {
        let names: Vec<String> = store.names_with_prefix("critic.").cloned().collect();
        for name in names {
            let target_name = format!("target.{}", &name["critic.".len()..]);
            let src = store.get(&name).clone();
            let mut dst = store.get(&target_name).clone();
            dst.zip_mut_with(&src, |t, &c| *t = tau * c + (1.0 - tau) * *t);
            store.set(&target_name, dst);
        }
    }

    /// One full agent update: critic step, actor step, temperature step,
    /// then target tracking.
    pub fn train_step(
        &self,
        store: &mut ParamStore,
        opt_actor: &mut Adam,
        opt_critic: &mut Adam,
        opt_temp: &mut Adam,
        batch: &AgentBatch,
        rng: &mut Rng,
    ) -> Result<AgentDiagnostics> {
        let b = batch.len();
        let draw = |rng: &mut Rng| -> Array2<f64> {
            Array2::from_shape_fn((b, self.action_dim), |_| StandardNormal.sample(rng))
        };
        let eps_next = draw(rng);
        let (g_c, loss_c) = self.critic_loss(store, batch, &eps_next)?;
        let critic_loss = g_c.scalar(loss_c);
        let grads_c = g_c.backward(loss_c);
        opt_critic.step(store, &grads_c);

        let eps_act = draw(rng);
        let (g_a, loss_a, log_probs) = self.actor_loss(store, &batch.features, &eps_act)?;
        let actor_loss = g_a.scalar(loss_a);
        let grads_a = g_a.backward(loss_a);
        opt_actor.step(store, &grads_a);

        let (g_t, loss_t) = self.temperature_loss(store, &log_probs)?;
        let temperature_loss = g_t.scalar(loss_t);
        let grads_t = g_t.backward(loss_t);
        opt_temp.step(store, &grads_t);

        self.polyak_update(store, self.cfg.tau);
        let entropy = -log_probs.sum() / b as f64;
        Ok(AgentDiagnostics {
            critic_loss,
            actor_loss,
            temperature_loss,
            alpha: store.get("temp.log_alpha")[(0, 0)].exp(),
            entropy,
        })
    }

    /// Sample an action for acting in the environment.
    pub fn act(&self, store: &ParamStore, feature: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let eps = Array2::from_shape_fn((1, self.action_dim), |_| StandardNormal.sample(rng));
        let mut g = Graph::new();
        let feat = g.constant(row(feature));
        let (action, _) = self.sample_action(&mut g, store, true, feat, &eps);
        g.check_finite(action, "agent.act")?;
        Ok(g.value(action).row(0).to_vec())
    }

    /// Deterministic action: tanh of the policy mean.
    pub fn act_mean(&self, store: &ParamStore, feature: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let feat = g.constant(row(feature));
        let (mean, _) = self.actor_forward(&mut g, store, true, feat);
        let action = g.tanh(mean);
        g.check_finite(action, "agent.act")?;
        Ok(g.value(action).row(0).to_vec())
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row build")
}
