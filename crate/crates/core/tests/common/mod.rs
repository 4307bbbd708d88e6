//! Independent reference computations shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bsc_attack::agent::{
    policy_gradient, reinforce_step, sample_batch, ActionSequence, ActionSpace, Adam, AgentParams, AgentShape,
};
use bsc_attack::overlay::PixelBox;

/// Pixel cells covered by at least two boxes and by at least one box, by direct
/// rasterization over a window that contains every box.
pub fn brute_overlap(boxes: &[PixelBox]) -> (u64, u64) {
    let live: Vec<&PixelBox> = boxes.iter().filter(|b| b.area() > 0).collect();
    if live.is_empty() {
        return (0, 0);
    }
    let x0 = live.iter().map(|b| b.left).min().unwrap();
    let x1 = live.iter().map(|b| b.right()).max().unwrap();
    let y0 = live.iter().map(|b| b.top).min().unwrap();
    let y1 = live.iter().map(|b| b.bottom()).max().unwrap();
    let (mut inter, mut union) = (0, 0);
    for y in y0..y1 {
        for x in x0..x1 {
            let n = live
                .iter()
                .filter(|b| b.left <= x && x < b.right() && b.top <= y && y < b.bottom())
                .count();
            union += (n >= 1) as u64;
            inter += (n >= 2) as u64;
        }
    }
    (inter, union)
}

pub fn pairwise_disjoint(boxes: &[PixelBox]) -> bool {
    let mut seen = std::collections::HashSet::new();
    boxes.iter().all(|b| {
        (b.top..b.bottom()).all(|y| (b.left..b.right()).all(|x| seen.insert((x, y))))
    })
}

pub fn tiny_shape() -> AgentShape {
    AgentShape {
        vocab: 5,
        embed: 3,
        hidden: 4,
    }
}

/// Parameters drawn from `[-scale, scale]` so that distributions are far from uniform.
pub fn spread_params(shape: AgentShape, scale: f64, seed: u64) -> AgentParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.param_count()).map(|_| rng.gen_range(-scale..scale)).collect();
    AgentParams::from_flat(shape, data).unwrap()
}

/// Surrogate `(1/B) sum_n r_n log P_n` with the actions held fixed.
fn surrogate(params: &AgentParams, space: &ActionSpace, batch: &[(Vec<usize>, f64)]) -> f64 {
    batch
        .iter()
        .map(|(a, r)| r * params.log_prob(space, a).unwrap())
        .sum::<f64>()
        / batch.len() as f64
}

/// Largest relative error between the analytic policy gradient and central
/// differences of the surrogate, over every parameter. The relative error of a
/// component is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(seed: u64, step: f64, floor: f64) -> (f64, usize) {
    let space = ActionSpace::raw(&[5, 5, 5]).unwrap();
    let params = spread_params(tiny_shape(), 0.8, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let seqs = sample_batch(&params, &space, 6, &mut rng).unwrap();
    let batch: Vec<(ActionSequence, f64)> = seqs.into_iter().map(|s| (s, rng.gen_range(-2.0..1.0))).collect();
    let plain: Vec<(Vec<usize>, f64)> = batch.iter().map(|(s, r)| (s.actions.clone(), *r)).collect();
    let analytic = policy_gradient(&params, &space, &batch, false).unwrap();

    let mut worst = 0.0f64;
    for i in 0..params.as_slice().len() {
        let mut plus = params.clone();
        plus.as_mut_slice()[i] += step;
        let mut minus = params.clone();
        minus.as_mut_slice()[i] -= step;
        let numeric = (surrogate(&plus, &space, &plain) - surrogate(&minus, &space, &plain)) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    (worst, params.as_slice().len())
}

/// Exact per-step marginals of the policy by enumerating every sequence.
pub fn exact_marginals(params: &AgentParams, space: &ActionSpace) -> Vec<Vec<f64>> {
    let vocabs: Vec<usize> = (0..space.len()).map(|s| space.vocab(s)).collect();
    let mut marg: Vec<Vec<f64>> = vocabs.iter().map(|&v| vec![0.0; v]).collect();
    let total: usize = vocabs.iter().product();
    for mut code in 0..total {
        let mut seq = Vec::with_capacity(vocabs.len());
        for &v in &vocabs {
            seq.push(code % v);
            code /= v;
        }
        let p = params.log_prob(space, &seq).unwrap().exp();
        for (s, &a) in seq.iter().enumerate() {
            marg[s][a] += p;
        }
    }
    marg
}

/// Largest per-step total-variation distance between empirical action
/// frequencies over `draws` rollouts and the exact marginals.
pub fn sampling_tv(draws: usize, seed: u64) -> f64 {
    let space = ActionSpace::raw(&[5, 4, 5]).unwrap();
    let params = spread_params(tiny_shape(), 1.5, seed);
    let exact = exact_marginals(&params, &space);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    let mut counts: Vec<Vec<usize>> = exact.iter().map(|m| vec![0; m.len()]).collect();
    for seq in sample_batch(&params, &space, draws, &mut rng).unwrap() {
        for (s, &a) in seq.actions.iter().enumerate() {
            counts[s][a] += 1;
        }
    }
    exact
        .iter()
        .zip(&counts)
        .map(|(m, c)| 0.5 * m.iter().zip(c).map(|(p, &n)| (p - n as f64 / draws as f64).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub const BANDIT_MEANS: [f64; 4] = [0.2, 0.4, 0.5, 0.8];

/// Train a one-step policy on a Bernoulli 4-arm bandit and return the final
/// probability of the best arm.
pub fn bandit_run(seed: u64, batch: usize, updates: usize) -> f64 {
    let space = ActionSpace::raw(&[4]).unwrap();
    let mut params = AgentParams::init(AgentShape::for_space(&space), seed);
    let mut opt = Adam::new(params.as_slice().len(), 0.03);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba4d17);
    for _ in 0..updates {
        let seqs = sample_batch(&params, &space, batch, &mut rng).unwrap();
        let rewards: Vec<f64> = seqs
            .iter()
            .map(|s| rng.gen_bool(BANDIT_MEANS[s.actions[0]]) as u8 as f64)
            .collect();
        let b: Vec<_> = seqs.into_iter().zip(rewards).collect();
        reinforce_step(&mut params, &mut opt, &space, &b, false).unwrap();
    }
    params.step_distributions(&space, &[3]).unwrap()[0][3]
}
