//! Embedding -> LSTM -> shared output layer, sampled autoregressively.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ActionSpace, AgentError};

pub const DEFAULT_HIDDEN: usize = 30;
pub const DEFAULT_EMBED: usize = 30;
pub const INIT_SCALE: f64 = 0.08;

/// Layer sizes of the policy network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgentShape {
    /// Rows of the embedding table and of the output layer (`V_max`).
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl AgentShape {
    pub fn for_space(space: &ActionSpace) -> Self {
        Self {
            vocab: space.max_vocab(),
            embed: DEFAULT_EMBED,
            hidden: DEFAULT_HIDDEN,
        }
    }

    pub fn embedding_len(&self) -> usize {
        self.vocab * self.embed
    }
    pub fn input_weights_len(&self) -> usize {
        4 * self.hidden * self.embed
    }
    pub fn recurrent_weights_len(&self) -> usize {
        4 * self.hidden * self.hidden
    }
    pub fn bias_len(&self) -> usize {
        4 * self.hidden
    }
    pub fn output_len(&self) -> usize {
        self.vocab * self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.embedding_len()
            + self.input_weights_len()
            + self.recurrent_weights_len()
            + self.bias_len()
            + self.output_len()
    }

    fn offsets(&self) -> [usize; 5] {
        let e = 0;
        let wi = e + self.embedding_len();
        let wh = wi + self.input_weights_len();
        let b = wh + self.recurrent_weights_len();
        let out = b + self.bias_len();
        [e, wi, wh, b, out]
    }
}

/// All trainable weights, stored in one flat buffer.
///
/// Layout: embedding `[V][E]`, input weights `[4Hd][E]`, recurrent weights
/// `[4Hd][Hd]`, gate bias `[4Hd]`, output layer `[V][Hd]` (no bias). Gate rows
/// are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    shape: AgentShape,
    data: Vec<f64>,
}

/// Borrowed views of the parameter blocks.
struct Blocks<'a> {
    embedding: &'a [f64],
    w_in: &'a [f64],
    w_rec: &'a [f64],
    bias: &'a [f64],
    w_out: &'a [f64],
}

struct BlocksMut<'a> {
    embedding: &'a mut [f64],
    w_in: &'a mut [f64],
    w_rec: &'a mut [f64],
    bias: &'a mut [f64],
    w_out: &'a mut [f64],
}

fn split<'a>(shape: &AgentShape, data: &'a [f64]) -> Blocks<'a> {
    let (embedding, rest) = data.split_at(shape.embedding_len());
    let (w_in, rest) = rest.split_at(shape.input_weights_len());
    let (w_rec, rest) = rest.split_at(shape.recurrent_weights_len());
    let (bias, w_out) = rest.split_at(shape.bias_len());
    Blocks {
        embedding,
        w_in,
        w_rec,
        bias,
        w_out,
    }
}

fn split_mut<'a>(shape: &AgentShape, data: &'a mut [f64]) -> BlocksMut<'a> {
    let (embedding, rest) = data.split_at_mut(shape.embedding_len());
    let (w_in, rest) = rest.split_at_mut(shape.input_weights_len());
    let (w_rec, rest) = rest.split_at_mut(shape.recurrent_weights_len());
    let (bias, w_out) = rest.split_at_mut(shape.bias_len());
    BlocksMut {
        embedding,
        w_in,
        w_rec,
        bias,
        w_out,
    }
}

/// A sampled path through the action space with its log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence {
    pub actions: Vec<usize>,
    pub step_log_probs: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Default, Clone)]
struct StepCache {
    prev_action: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i | f | g | o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl AgentParams {
    /// Uniform `[-0.08, 0.08]` initialization from `seed`.
    pub fn init(shape: AgentShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.param_count())
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        Self { shape, data }
    }

    pub fn zeros(shape: AgentShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_flat(shape: AgentShape, data: Vec<f64>) -> Result<Self, AgentError> {
        if data.len() != shape.param_count() {
            return Err(AgentError::ShapeMismatch {
                expected: shape.param_count(),
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> AgentShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Offsets of the five parameter blocks inside the flat buffer.
    pub fn block_offsets(&self) -> [usize; 5] {
        self.shape.offsets()
    }

    fn check_space(&self, space: &ActionSpace) -> Result<(), AgentError> {
        if space.max_vocab() > self.shape.vocab {
            return Err(AgentError::VocabTooLarge {
                space: space.max_vocab(),
                params: self.shape.vocab,
            });
        }
        Ok(())
    }

    /// One LSTM step plus masked softmax over the first `vocab` outputs.
    fn step(&self, prev_action: usize, h_prev: &[f64], c_prev: &[f64], vocab: usize) -> StepCache {
        let AgentShape { embed, hidden, .. } = self.shape;
        let b = split(&self.shape, &self.data);
        let x = &b.embedding[prev_action * embed..(prev_action + 1) * embed];
        let mut gates = vec![0.0; 4 * hidden];
        for (r, z) in gates.iter_mut().enumerate() {
            let wi = &b.w_in[r * embed..(r + 1) * embed];
            let wh = &b.w_rec[r * hidden..(r + 1) * hidden];
            let mut acc = b.bias[r];
            acc += wi.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            acc += wh.iter().zip(h_prev).map(|(w, v)| w * v).sum::<f64>();
            *z = acc;
        }
        for k in 0..hidden {
            gates[k] = sigmoid(gates[k]);
            gates[hidden + k] = sigmoid(gates[hidden + k]);
            gates[2 * hidden + k] = gates[2 * hidden + k].tanh();
            gates[3 * hidden + k] = sigmoid(gates[3 * hidden + k]);
        }
        let mut c = vec![0.0; hidden];
        let mut tanh_c = vec![0.0; hidden];
        let mut h = vec![0.0; hidden];
        for k in 0..hidden {
            c[k] = gates[hidden + k] * c_prev[k] + gates[k] * gates[2 * hidden + k];
            tanh_c[k] = c[k].tanh();
            h[k] = gates[3 * hidden + k] * tanh_c[k];
        }
        let mut probs: Vec<f64> = (0..vocab)
            .map(|k| {
                b.w_out[k * hidden..(k + 1) * hidden]
                    .iter()
                    .zip(&h)
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect();
        let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
        StepCache {
            prev_action,
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h,
            probs,
        }
    }

    /// Run the recurrence, choosing each action with `choose(step, probs)`.
    fn unroll(&self, space: &ActionSpace, mut choose: impl FnMut(usize, &[f64]) -> usize) -> (Vec<usize>, Vec<StepCache>) {
        let hidden = self.shape.hidden;
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut prev = 0usize;
        let mut actions = Vec::with_capacity(space.len());
        let mut caches = Vec::with_capacity(space.len());
        for step in 0..space.len() {
            let cache = self.step(prev, &h, &c, space.vocab(step));
            let a = choose(step, &cache.probs);
            h.clone_from(&cache.h);
            c.clone_from(&cache.c);
            prev = a;
            actions.push(a);
            caches.push(cache);
        }
        (actions, caches)
    }

    /// Draw one action sequence.
    pub fn rollout(&self, space: &ActionSpace, rng: &mut impl Rng) -> Result<ActionSequence, AgentError> {
        self.check_space(space)?;
        let (actions, caches) = self.unroll(space, |_, probs| sample_categorical(probs, rng.gen::<f64>()));
        Ok(sequence_from(actions, &caches))
    }

    /// Per-step distributions along a fixed action path.
    pub fn step_distributions(&self, space: &ActionSpace, actions: &[usize]) -> Result<Vec<Vec<f64>>, AgentError> {
        self.check_space(space)?;
        space.check(actions)?;
        let (_, caches) = self.unroll(space, |step, _| actions[step]);
        Ok(caches.into_iter().map(|c| c.probs).collect())
    }

    /// Recompute the joint log-probability of `actions`.
    pub fn log_prob(&self, space: &ActionSpace, actions: &[usize]) -> Result<f64, AgentError> {
        self.check_space(space)?;
        space.check(actions)?;
        let (_, caches) = self.unroll(space, |step, _| actions[step]);
        Ok(sequence_from(actions.to_vec(), &caches).log_prob)
    }

    /// Adds `scale * d(log P(actions)) / d(params)` into `grad` by back-propagation
    /// through time. The sampled actions are treated as constants.
    pub fn accumulate_log_prob_grad(
        &self,
        space: &ActionSpace,
        actions: &[usize],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<(), AgentError> {
        self.check_space(space)?;
        space.check(actions)?;
        if grad.len() != self.data.len() {
            return Err(AgentError::ShapeMismatch {
                expected: self.data.len(),
                found: grad.len(),
            });
        }
        let AgentShape { embed, hidden, .. } = self.shape;
        let (_, caches) = self.unroll(space, |step, _| actions[step]);
        let w = split(&self.shape, &self.data);
        let g = split_mut(&self.shape, grad);

        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        let mut dz = vec![0.0; 4 * hidden];
        for (step, cache) in caches.iter().enumerate().rev() {
            let a = actions[step];
            let mut dh = dh_next.clone();
            for (k, &p) in cache.probs.iter().enumerate() {
                let dlogit = scale * (if k == a { 1.0 } else { 0.0 } - p);
                if dlogit == 0.0 {
                    continue;
                }
                let row = k * hidden;
                for j in 0..hidden {
                    g.w_out[row + j] += dlogit * cache.h[j];
                    dh[j] += dlogit * w.w_out[row + j];
                }
            }
            let (gi, gf, gg, go) = (
                &cache.gates[..hidden],
                &cache.gates[hidden..2 * hidden],
                &cache.gates[2 * hidden..3 * hidden],
                &cache.gates[3 * hidden..],
            );
            for k in 0..hidden {
                let d_o = dh[k] * cache.tanh_c[k];
                let dc = dh[k] * go[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]) + dc_next[k];
                let d_i = dc * gg[k];
                let d_g = dc * gi[k];
                let d_f = dc * cache.c_prev[k];
                dc_next[k] = dc * gf[k];
                dz[k] = d_i * gi[k] * (1.0 - gi[k]);
                dz[hidden + k] = d_f * gf[k] * (1.0 - gf[k]);
                dz[2 * hidden + k] = d_g * (1.0 - gg[k] * gg[k]);
                dz[3 * hidden + k] = d_o * go[k] * (1.0 - go[k]);
            }
            let x_off = cache.prev_action * embed;
            let x = &w.embedding[x_off..x_off + embed];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[r] += d;
                let wi = r * embed;
                for e in 0..embed {
                    g.w_in[wi + e] += d * x[e];
                    g.embedding[x_off + e] += d * w.w_in[wi + e];
                }
                let wh = r * hidden;
                for j in 0..hidden {
                    g.w_rec[wh + j] += d * cache.h_prev[j];
                    dh_next[j] += d * w.w_rec[wh + j];
                }
            }
        }
        Ok(())
    }
}

fn sequence_from(actions: Vec<usize>, caches: &[StepCache]) -> ActionSequence {
    let step_log_probs: Vec<f64> = actions
        .iter()
        .zip(caches)
        .map(|(&a, c)| c.probs[a].ln())
        .collect();
    let log_prob = step_log_probs.iter().sum();
    ActionSequence {
        actions,
        step_log_probs,
        log_prob,
    }
}

/// Inverse-CDF draw; only indices with positive probability can be returned.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draw `batch` independent sequences. Each rollout gets its own PRNG seeded from
/// `rng`, so the result does not depend on how many threads run the rollouts.
pub fn sample_batch(
    params: &AgentParams,
    space: &ActionSpace,
    batch: usize,
    rng: &mut impl RngCore,
) -> Result<Vec<ActionSequence>, AgentError> {
    params.check_space(space)?;
    let seeds: Vec<u64> = (0..batch).map(|_| rng.next_u64()).collect();
    seeds
        .into_par_iter()
        .map(|seed| params.rollout(space, &mut ChaCha8Rng::seed_from_u64(seed)))
        .collect()
}
