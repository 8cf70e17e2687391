//! Belief-conditioned actor-critic agent.

pub mod sac;

pub use sac::{AgentBatch, AgentDiagnostics, SacAgent, SacConfig};
