//! Sequential latent-state inference: the model, its training objective,
//! and exact affine instantiations on linear-Gaussian diagnostics.

pub mod analytic;
pub mod elbo;
pub mod model;

pub use analytic::{analytic_elbo, build_affine_model, perturb_posterior, standardized_system, trajectory_batch};
pub use elbo::{
    draw_noise, elbo_eval, elbo_gradient, elbo_loss, elbo_mc_estimate, train_model_step,
    BeliefBatch, ElboDiagnostics, SequenceBatch,
};
pub use model::{BeliefState, FilterNodes, GaussNodes, LatentModel, ModelArch};
