//! Independent ground-truth computations for the test suite.
//!
//! Nothing in here is learned or approximate by design: exact Kalman
//! filtering and likelihoods for linear-Gaussian state-space systems,
//! closed-form Gaussian KL divergences, Monte-Carlo estimators with
//! standard errors, and central finite-difference gradients. Learned-model
//! tests compare against these, never against themselves. Everything runs
//! in double precision — these functions define what "correct" means.

pub mod finite_diff;
pub mod gaussian;
pub mod kalman;

pub use finite_diff::{finite_diff_grad, max_rel_error};
pub use gaussian::{diag_gaussian_log_density, gaussian_kl, gaussian_kl_full, mc_gaussian_kl};
pub use kalman::{joint_conditional, kalman_filter, FilterResult, Lgss};
