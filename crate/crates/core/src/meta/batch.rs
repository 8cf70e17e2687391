//! Batch assembly: stored trials → model sequence batches, and filtered
//! beliefs → agent transition batches.
//!
//! The agent never refilters on its own: its features come from the same
//! filtering pass that produced the model loss (or, in decoupled mode,
//! from one dedicated evaluation pass). Rewards for the critic always use
//! the dense channel; the sparse/dense choice only affects what the
//! posterior sees as evidence.

use ndarray::Array2;

use crate::agent::AgentBatch;
use crate::envs::RewardMode;
use crate::error::{Error, Result};
use crate::latent::{BeliefBatch, SequenceBatch};
use crate::meta::buffer::Trajectory;
use crate::rng::Rng;

/// Stack equal-length trials into one model batch. `evidence` selects the
/// posterior-input reward channel; the reconstruction target is always
/// the dense channel.
pub fn sequence_batch(trials: &[&Trajectory], evidence: RewardMode) -> Result<SequenceBatch> {
    if trials.is_empty() {
        return Err(Error::Usage("sequence_batch: no trials".into()));
    }
    let t_len = trials[0].len();
    let obs_len = trials[0].obs[0].len();
    for tr in trials.iter() {
        tr.validate()?;
        if tr.len() != t_len {
            return Err(Error::Usage(format!(
                "sequence_batch: mixed trial lengths {} vs {t_len}",
                tr.len()
            )));
        }
        if tr.obs[0].len() != obs_len {
            return Err(Error::Usage(format!(
                "sequence_batch: mixed observation widths {} vs {obs_len}",
                tr.obs[0].len()
            )));
        }
    }
    let b = trials.len();
    let obs = (0..t_len)
        .map(|t| Array2::from_shape_fn((b, obs_len), |(i, j)| trials[i].obs[t][j]))
        .collect();
    let rewards = Array2::from_shape_fn((b, t_len), |(i, t)| trials[i].reward(evidence, t));
    let recon_rewards =
        Array2::from_shape_fn((b, t_len), |(i, t)| trials[i].reward(RewardMode::Shaped, t));
    let model_actions: Vec<Vec<Vec<f64>>> = trials.iter().map(|tr| tr.model_actions()).collect();
    let d_in = model_actions[0][0].len();
    let actions = (0..t_len - 1)
        .map(|t| Array2::from_shape_fn((b, d_in), |(i, j)| model_actions[i][t][j]))
        .collect();
    Ok(SequenceBatch {
        obs,
        rewards,
        recon_rewards,
        actions,
    })
}

/// Flatten every transition of a filtered sequence batch into agent rows
/// (t-major): features b_t, raw action a_t, dense reward r_{t+1},
/// features b_{t+1}, done on the trial's final record only. Boundary rows
/// keep their zero action — that is how the critic's return bootstraps
/// across episodes inside a trial.
pub fn agent_transitions(batch: &SequenceBatch, beliefs: &BeliefBatch) -> Result<AgentBatch> {
    let t_len = batch.horizon();
    let b = batch.num_sequences();
    if beliefs.means.len() != t_len || beliefs.log_vars.len() != t_len {
        return Err(Error::Usage(format!(
            "agent_transitions: {} belief records for a {t_len}-record batch",
            beliefs.means.len()
        )));
    }
    let l = beliefs.means[0].ncols();
    let d_model = batch.actions[0].ncols();
    if d_model < 2 {
        return Err(Error::Usage(
            "agent_transitions: model actions must be env action + boundary flag".into(),
        ));
    }
    let d = d_model - 1;
    let n = b * (t_len - 1);
    let feature = |t: usize, i: usize, j: usize| {
        if j < l {
            beliefs.means[t][(i, j)]
        } else {
            beliefs.log_vars[t][(i, j - l)]
        }
    };
    let features = Array2::from_shape_fn((n, 2 * l), |(row, j)| feature(row / b, row % b, j));
    let next_features =
        Array2::from_shape_fn((n, 2 * l), |(row, j)| feature(row / b + 1, row % b, j));
    let actions = Array2::from_shape_fn((n, d), |(row, j)| batch.actions[row / b][(row % b, j)]);
    let rewards =
        Array2::from_shape_fn((n, 1), |(row, _)| batch.recon_rewards[(row % b, row / b + 1)]);
    let done = Array2::from_shape_fn((n, 1), |(row, _)| {
        if row / b + 1 == t_len - 1 {
            1.0
        } else {
            0.0
        }
    });
    Ok(AgentBatch {
        features,
        actions,
        rewards,
        next_features,
        done,
    })
}

/// Row-concatenate per-task agent batches.
pub fn concat_agent_batches(parts: &[AgentBatch]) -> Result<AgentBatch> {
    if parts.is_empty() {
        return Err(Error::Usage("concat_agent_batches: no parts".into()));
    }
    let stack = |take: fn(&AgentBatch) -> &Array2<f64>| {
        let views: Vec<_> = parts.iter().map(|p| take(p).view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::Usage(format!("concat_agent_batches: {e}")))
    };
    Ok(AgentBatch {
        features: stack(|p| &p.features)?,
        actions: stack(|p| &p.actions)?,
        rewards: stack(|p| &p.rewards)?,
        next_features: stack(|p| &p.next_features)?,
        done: stack(|p| &p.done)?,
    })
}

/// Uniform subsample (without replacement) down to at most `n` rows.
pub fn subsample_agent_batch(batch: &AgentBatch, n: usize, rng: &mut Rng) -> AgentBatch {
    let total = batch.len();
    if n >= total {
        return batch.clone();
    }
    let idx = rand::seq::index::sample(rng, total, n).into_vec();
    let pick = |a: &Array2<f64>| {
        Array2::from_shape_fn((n, a.ncols()), |(row, j)| a[(idx[row], j)])
    };
    AgentBatch {
        features: pick(&batch.features),
        actions: pick(&batch.actions),
        rewards: pick(&batch.rewards),
        next_features: pick(&batch.next_features),
        done: pick(&batch.done),
    }
}
