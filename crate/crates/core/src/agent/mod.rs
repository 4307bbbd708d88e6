//! Recurrent placement policy trained with REINFORCE.
//!
//! At each of the `3m` steps the previous action (starting from `a_0 = 0`) is
//! embedded and fed to a single-layer LSTM whose state starts at zero. A shared,
//! bias-free output layer produces logits; entries beyond the step's vocabulary
//! are masked out before the softmax.

mod adam;
mod checkpoint;
mod policy;
mod space;

use rayon::prelude::*;
use thiserror::Error;

pub use adam::{adam_update, Adam, DEFAULT_LR};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use policy::{
    sample_batch, sample_categorical, ActionSequence, AgentParams, AgentShape, DEFAULT_EMBED,
    DEFAULT_HIDDEN, INIT_SCALE,
};
pub use space::{ActionSpace, ActionStep, StepKind};

/// Alias matching the optimizer-state role in the training loop.
pub type OptimizerState = Adam;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("action space has no steps")]
    EmptySpace,
    #[error("a step has an empty vocabulary")]
    EmptyVocabulary,
    #[error("BSC {bsc}: glyph {glyph:?} (w, h) does not fit a {frame:?} (h, w) frame")]
    GlyphDoesNotFit {
        bsc: usize,
        glyph: (usize, usize),
        frame: (usize, usize),
    },
    #[error("sequence has {found} actions, space has {expected} steps")]
    SequenceLength { expected: usize, found: usize },
    #[error("action {action} at step {step} outside vocabulary of {vocab}")]
    ActionOutOfRange { step: usize, action: usize, vocab: usize },
    #[error("space needs vocabulary {space}, parameters only have {params}")]
    VocabTooLarge { space: usize, params: usize },
    #[error("parameter buffer has {found} values, shape needs {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("reward {reward} of rollout {index} is not finite")]
    NonFiniteReward { index: usize, reward: f64 },
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// `(1/B) * sum_n (r_n - b_n) * grad log P_n`.
///
/// With `baseline` each rollout's reward is offset by the mean reward of the
/// *other* rollouts in the batch (zero for a batch of one).
pub fn policy_gradient(
    params: &AgentParams,
    space: &ActionSpace,
    batch: &[(ActionSequence, f64)],
    baseline: bool,
) -> Result<Vec<f64>, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    if let Some((index, &(_, reward))) = batch.iter().enumerate().find(|(_, (_, r))| !r.is_finite()) {
        return Err(AgentError::NonFiniteReward { index, reward });
    }
    let n = batch.len() as f64;
    let total: f64 = batch.iter().map(|(_, r)| r).sum();
    let weights: Vec<f64> = batch
        .iter()
        .map(|&(_, r)| {
            if baseline && batch.len() > 1 {
                r - (total - r) / (n - 1.0)
            } else {
                r
            }
        })
        .collect();

    let per_rollout: Vec<Vec<f64>> = batch
        .par_iter()
        .zip(weights.par_iter())
        .map(|((seq, _), &w)| {
            let mut g = vec![0.0; params.as_slice().len()];
            if w != 0.0 {
                params.accumulate_log_prob_grad(space, &seq.actions, w, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<_, AgentError>>()?;

    // Reduce in batch order so the sum does not depend on scheduling.
    let mut grad = vec![0.0; params.as_slice().len()];
    for g in &per_rollout {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    for (index, v) in grad.iter_mut().enumerate() {
        *v /= n;
        if !v.is_finite() {
            return Err(AgentError::NonFiniteGradient { index });
        }
    }
    Ok(grad)
}

/// One REINFORCE update: estimate the policy gradient and take an Adam ascent step.
pub fn reinforce_step(
    params: &mut AgentParams,
    opt: &mut Adam,
    space: &ActionSpace,
    batch: &[(ActionSequence, f64)],
    baseline: bool,
) -> Result<(), AgentError> {
    if opt.len() != params.as_slice().len() {
        return Err(AgentError::ShapeMismatch {
            expected: params.as_slice().len(),
            found: opt.len(),
        });
    }
    let grad = policy_gradient(params, space, batch, baseline)?;
    opt.ascend(params.as_mut_slice(), &grad);
    Ok(())
}
