use crate::overlay::{BscPlacement, ALPHA_MIN};

use super::AgentError;

/// What a decision step chooses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Horizontal start of BSC `bsc`.
    U { bsc: usize },
    /// Vertical start of BSC `bsc`.
    V { bsc: usize },
    /// Transparency of BSC `bsc`.
    Alpha { bsc: usize },
    /// Free-standing categorical choice (bandits, tests).
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionStep {
    pub kind: StepKind,
    /// Value decoded from action index 0.
    pub min: i64,
    /// Number of legal actions at this step.
    pub size: usize,
}

impl ActionStep {
    pub fn decode(&self, index: usize) -> i64 {
        debug_assert!(index < self.size);
        self.min + index as i64
    }

    pub fn encode(&self, value: i64) -> Option<usize> {
        let idx = value - self.min;
        (0..self.size as i64).contains(&idx).then_some(idx as usize)
    }

    pub fn max(&self) -> i64 {
        self.min + self.size as i64 - 1
    }
}

/// The discrete search space: `(u_k, v_k, alpha_k)` for each of `m` BSCs,
/// flattened into `3m` sequential steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    steps: Vec<ActionStep>,
    bsc_count: usize,
}

impl ActionSpace {
    /// Space for BSCs whose rendered masks have the given `(width, height)`s, on an
    /// `frame_h x frame_w` frame. Ranges are `u in [-w, W]`, `v in [0, H - h]`,
    /// `alpha in [127, 255]`.
    pub fn for_bscs(glyph_dims: &[(usize, usize)], frame_h: usize, frame_w: usize) -> Result<Self, AgentError> {
        if glyph_dims.is_empty() {
            return Err(AgentError::EmptySpace);
        }
        let mut steps = Vec::with_capacity(3 * glyph_dims.len());
        for (bsc, &(w, h)) in glyph_dims.iter().enumerate() {
            if h > frame_h || w == 0 {
                return Err(AgentError::GlyphDoesNotFit {
                    bsc,
                    glyph: (w, h),
                    frame: (frame_h, frame_w),
                });
            }
            steps.push(ActionStep {
                kind: StepKind::U { bsc },
                min: -(w as i64),
                size: frame_w + w + 1,
            });
            steps.push(ActionStep {
                kind: StepKind::V { bsc },
                min: 0,
                size: frame_h - h + 1,
            });
            steps.push(ActionStep {
                kind: StepKind::Alpha { bsc },
                min: ALPHA_MIN as i64,
                size: 129,
            });
        }
        Ok(Self {
            steps,
            bsc_count: glyph_dims.len(),
        })
    }

    /// A space of plain categorical steps with the given vocabulary sizes.
    pub fn raw(vocabs: &[usize]) -> Result<Self, AgentError> {
        if vocabs.is_empty() {
            return Err(AgentError::EmptySpace);
        }
        if vocabs.contains(&0) {
            return Err(AgentError::EmptyVocabulary);
        }
        Ok(Self {
            steps: vocabs
                .iter()
                .map(|&size| ActionStep {
                    kind: StepKind::Raw,
                    min: 0,
                    size,
                })
                .collect(),
            bsc_count: 0,
        })
    }

    pub fn steps(&self) -> &[ActionStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn bsc_count(&self) -> usize {
        self.bsc_count
    }

    pub fn vocab(&self, step: usize) -> usize {
        self.steps[step].size
    }

    pub fn max_vocab(&self) -> usize {
        self.steps.iter().map(|s| s.size).max().unwrap_or(0)
    }

    /// Number of points in the space, saturating.
    pub fn cardinality(&self) -> u128 {
        self.steps
            .iter()
            .fold(1u128, |acc, s| acc.saturating_mul(s.size as u128))
    }

    pub fn check(&self, actions: &[usize]) -> Result<(), AgentError> {
        if actions.len() != self.steps.len() {
            return Err(AgentError::SequenceLength {
                expected: self.steps.len(),
                found: actions.len(),
            });
        }
        for (step, (&a, s)) in actions.iter().zip(&self.steps).enumerate() {
            if a >= s.size {
                return Err(AgentError::ActionOutOfRange {
                    step,
                    action: a,
                    vocab: s.size,
                });
            }
        }
        Ok(())
    }

    /// Decoded values `(u_1, v_1, alpha_1, ..., u_m, v_m, alpha_m)`.
    pub fn decode(&self, actions: &[usize]) -> Vec<i64> {
        actions
            .iter()
            .zip(&self.steps)
            .map(|(&a, s)| s.decode(a))
            .collect()
    }

    pub fn encode(&self, values: &[i64]) -> Option<Vec<usize>> {
        if values.len() != self.steps.len() {
            return None;
        }
        values
            .iter()
            .zip(&self.steps)
            .map(|(&v, s)| s.encode(v))
            .collect()
    }

    /// Placements from a decoded value vector.
    pub fn placements_from_values(&self, values: &[i64]) -> Vec<BscPlacement> {
        assert_eq!(values.len(), 3 * self.bsc_count, "not a BSC space");
        values
            .chunks_exact(3)
            .map(|c| BscPlacement::new(c[0], c[1], c[2] as u8))
            .collect()
    }

    pub fn placements(&self, actions: &[usize]) -> Vec<BscPlacement> {
        self.placements_from_values(&self.decode(actions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bsc_space_ranges() {
        let space = ActionSpace::for_bscs(&[(40, 9), (25, 9)], 64, 64).unwrap();
        assert_eq!(space.len(), 6);
        assert_eq!(space.vocab(0), 64 + 40 + 1);
        assert_eq!(space.vocab(1), 64 - 9 + 1);
        assert_eq!(space.vocab(2), 129);
        assert_eq!(space.vocab(3), 64 + 25 + 1);
        assert_eq!(space.max_vocab(), 129);
        let lo = space.decode(&[0, 0, 0, 0, 0, 0]);
        assert_eq!(lo, vec![-40, 0, 127, -25, 0, 127]);
        let hi: Vec<usize> = (0..6).map(|s| space.vocab(s) - 1).collect();
        assert_eq!(space.decode(&hi), vec![64, 55, 255, 64, 55, 255]);
        assert_eq!(space.encode(&space.decode(&hi)), Some(hi.clone()));
        assert_eq!(space.encode(&[65, 0, 127, 0, 0, 127]), None);
        let p = space.placements(&hi);
        assert_eq!(p[1], BscPlacement::new(64, 55, 255));
    }

    #[test]
    fn decode_is_bijective_per_step() {
        let space = ActionSpace::for_bscs(&[(7, 3)], 5, 6).unwrap();
        for s in space.steps() {
            let values: Vec<i64> = (0..s.size).map(|i| s.decode(i)).collect();
            for (i, v) in values.iter().enumerate() {
                assert_eq!(s.encode(*v), Some(i));
            }
            assert_eq!(s.encode(s.max() + 1), None);
            assert_eq!(s.encode(s.min - 1), None);
        }
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(ActionSpace::for_bscs(&[], 8, 8).is_err());
        assert!(ActionSpace::for_bscs(&[(3, 9)], 8, 8).is_err());
        assert!(ActionSpace::raw(&[3, 0]).is_err());
        let raw = ActionSpace::raw(&[4]).unwrap();
        assert!(raw.check(&[4]).is_err());
        assert!(raw.check(&[3]).is_ok());
        assert!(raw.check(&[1, 1]).is_err());
    }
}
