//! Meta-training over a task distribution.
//!
//! The pieces, bottom to top: whole-trajectory replay buffers keyed by
//! task ([`buffer`]); trial collection with the belief carried across
//! episodes ([`rollout`]); assembly of stored trials into model sequence
//! batches and of filtered beliefs into agent transition batches
//! ([`batch`]); the alternating collect/update loop with its warmstart,
//! divergence guard, and sparse second stage ([`train`]); and
//! pure-execution meta-testing plus the evaluation metrics ([`eval`]).

pub mod batch;
pub mod buffer;
pub mod eval;
pub mod rollout;
pub mod train;

pub use batch::{agent_transitions, concat_agent_batches, sequence_batch, subsample_agent_batch};
pub use buffer::{ReplayBuffer, ReplayBufferSet, Trajectory};
pub use eval::{
    arc_coverage, meta_test, nonstationary_eval, presuccess_positions, reward_decoder_trace,
    steps_to_band, straight_to_goal_baseline, EvalSummary, EvalTrial, NonstatEpisode, NonstatReport,
};
pub use rollout::{collect_trial, EpisodeStats, PolicyKind, TrialResult};
pub use train::{meta_train, meta_train_sparse, run_loop, IterationMetrics, Stage, Trainer};
