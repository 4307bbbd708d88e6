//! Query-budgeted baselines over an [`ActionSpace`]: uniform random search and
//! basin hopping with greedy coordinate descent as the local step.

use rand::Rng;

use crate::agent::ActionSpace;

/// Result of evaluating one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub reward: f64,
    pub success: bool,
}

type EvalFn<'a, E> = Box<dyn FnMut(&[i64]) -> Result<Evaluation, E> + 'a>;

/// A black-box function of decoded values `(u_1, v_1, alpha_1, ...)` with a hard
/// query budget. Every call to [`Objective::evaluate`] that reaches the function
/// costs exactly one query.
pub struct Objective<'a, E> {
    eval: EvalFn<'a, E>,
    budget: usize,
    queries: usize,
}

impl<'a, E> Objective<'a, E> {
    pub fn new(budget: usize, eval: impl FnMut(&[i64]) -> Result<Evaluation, E> + 'a) -> Self {
        Self {
            eval: Box::new(eval),
            budget,
            queries: 0,
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.queries
    }

    /// `Ok(None)` once the budget is spent.
    pub fn evaluate(&mut self, values: &[i64]) -> Result<Option<Evaluation>, E> {
        if self.queries >= self.budget {
            return Ok(None);
        }
        self.queries += 1;
        (self.eval)(values).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Action indices of the returned point.
    pub point: Vec<usize>,
    /// Decoded values of the returned point.
    pub values: Vec<i64>,
    pub reward: f64,
    pub success: bool,
    pub queries: usize,
}

struct Best {
    point: Vec<usize>,
    reward: f64,
    success: bool,
}

impl Best {
    fn offer(&mut self, point: &[usize], eval: Evaluation) {
        if eval.success || eval.reward > self.reward {
            self.point = point.to_vec();
            self.reward = eval.reward;
            self.success = eval.success;
        }
    }

    fn finish<E>(self, space: &ActionSpace, obj: &Objective<'_, E>) -> SearchOutcome {
        SearchOutcome {
            values: space.decode(&self.point),
            point: self.point,
            reward: self.reward,
            success: self.success,
            queries: obj.queries(),
        }
    }
}

fn uniform_point(space: &ActionSpace, rng: &mut impl Rng) -> Vec<usize> {
    space.steps().iter().map(|s| rng.gen_range(0..s.size)).collect()
}

/// I.i.d. uniform samples until the first success or until the budget runs out.
pub fn random_search<E>(
    obj: &mut Objective<'_, E>,
    space: &ActionSpace,
    rng: &mut impl Rng,
) -> Result<SearchOutcome, E> {
    let mut best = Best {
        point: vec![0; space.len()],
        reward: f64::NEG_INFINITY,
        success: false,
    };
    loop {
        let point = uniform_point(space, rng);
        let Some(eval) = obj.evaluate(&space.decode(&point))? else {
            break;
        };
        best.offer(&point, eval);
        if eval.success {
            break;
        }
    }
    Ok(best.finish(space, obj))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BhConfig {
    /// Maximum absolute integer hop per dimension (each >= 1).
    pub hop_scale: Vec<usize>,
    /// Metropolis temperature; 0 never accepts a worse hop.
    pub temperature: f64,
    /// Coordinate-descent passes after each hop.
    pub local_passes: usize,
}

impl BhConfig {
    /// Hop scale of a tenth of each dimension's range, temperature 1, one pass.
    pub fn default_for(space: &ActionSpace) -> Self {
        Self {
            hop_scale: space.steps().iter().map(|s| (s.size / 10).max(1)).collect(),
            temperature: 1.0,
            local_passes: 1,
        }
    }
}

enum Step {
    Continue(f64),
    Stop,
}

/// Evaluates `point`, records it, and reports whether the search must stop.
fn probe<E>(
    obj: &mut Objective<'_, E>,
    space: &ActionSpace,
    best: &mut Best,
    point: &[usize],
) -> Result<Step, E> {
    match obj.evaluate(&space.decode(point))? {
        None => Ok(Step::Stop),
        Some(eval) => {
            best.offer(point, eval);
            if eval.success {
                Ok(Step::Stop)
            } else {
                Ok(Step::Continue(eval.reward))
            }
        }
    }
}

/// Basin hopping: random hop, greedy +-1 coordinate descent, Metropolis
/// acceptance. Maximizes the reward and stops at the first success.
pub fn basin_hopping<E>(
    obj: &mut Objective<'_, E>,
    space: &ActionSpace,
    cfg: &BhConfig,
    rng: &mut impl Rng,
) -> Result<SearchOutcome, E> {
    assert_eq!(cfg.hop_scale.len(), space.len(), "hop scale per dimension");
    let mut best = Best {
        point: vec![0; space.len()],
        reward: f64::NEG_INFINITY,
        success: false,
    };
    let mut current = uniform_point(space, rng);
    let Step::Continue(mut current_reward) = probe(obj, space, &mut best, &current)? else {
        return Ok(best.finish(space, obj));
    };

    'outer: loop {
        let mut cand: Vec<usize> = current
            .iter()
            .zip(space.steps())
            .zip(&cfg.hop_scale)
            .map(|((&x, s), &hop)| {
                let hop = hop.max(1) as i64;
                let moved = x as i64 + rng.gen_range(-hop..=hop);
                moved.clamp(0, s.size as i64 - 1) as usize
            })
            .collect();
        let Step::Continue(mut cand_reward) = probe(obj, space, &mut best, &cand)? else {
            break;
        };

        for _ in 0..cfg.local_passes {
            let mut improved = false;
            for d in 0..space.len() {
                for delta in [1i64, -1] {
                    let moved = cand[d] as i64 + delta;
                    if moved < 0 || moved >= space.vocab(d) as i64 {
                        continue;
                    }
                    let mut neighbour = cand.clone();
                    neighbour[d] = moved as usize;
                    let Step::Continue(r) = probe(obj, space, &mut best, &neighbour)? else {
                        break 'outer;
                    };
                    if r > cand_reward {
                        cand = neighbour;
                        cand_reward = r;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                break;
            }
        }

        let accept = if cand_reward > current_reward {
            true
        } else if cfg.temperature > 0.0 {
            rng.gen::<f64>() < ((cand_reward - current_reward) / cfg.temperature).exp()
        } else {
            false
        };
        if accept {
            current = cand;
            current_reward = cand_reward;
        }
    }
    Ok(best.finish(space, obj))
}
