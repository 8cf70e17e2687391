//! Meta-reinforcement-learning as latent state inference.
//!
//! A sequential latent variable model treats both the physical state and the
//! task as hidden variables inferred from observations *and rewards*. The
//! per-timestep posterior (the belief state) conditions a soft actor-critic,
//! which lets a trained agent adapt to unseen tasks within one or two
//! episodes, including from sparse completion rewards.
//!
//! Crate layout mirrors the subsystems:
//!
//! - [`envs`]: desk-scale task-distribution environments (2D navigation,
//!   button panel, velocity tracking, linear-Gaussian diagnostic).
//! - [`nn`]: reverse-mode autodiff over `f64` matrices, dense and
//!   convolutional layers, Adam.
//! - [`latent`]: the sequential latent variable model, belief filtering,
//!   and the evidence lower bound objective (plus its sparse-reward variant).
//! - [`agent`]: belief-conditioned soft actor-critic with twin critics.
//! - [`meta`]: meta-training / meta-testing loops, per-task replay,
//!   the two-stage sparse-reward procedure, nonstationary evaluation.
//! - [`oracles`]: exact Kalman filtering, closed-form Gaussian KL,
//!   finite-difference gradients — ground truth for the test suite.
//! - [`harness`]: run configs, manifests, metrics, checkpoints, plots.

pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod latent;
pub mod meta;
pub mod nn;
pub mod oracles;
pub mod rng;

pub use error::{Error, Result};
