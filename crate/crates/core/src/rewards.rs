//! Attack reward, overlap penalty, and occlusion metrics.

use thiserror::Error;

use crate::overlay::{PixelBox, RegionSet};
use crate::tensor_io::{Label, PredictionVector};

pub const DEFAULT_LAMBDA: f64 = 1e-3;
pub const DEFAULT_LOG_CLAMP: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("lambda must be finite and non-negative, got {0}")]
    BadLambda(f64),
    #[error("log clamp must lie in (0, 1), got {0}")]
    BadClamp(f64),
    #[error("salient masks are {found:?}, regions are {expected:?}")]
    DimensionMismatch { expected: [usize; 3], found: [usize; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    lambda: f64,
    log_clamp: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            log_clamp: DEFAULT_LOG_CLAMP,
        }
    }
}

impl RewardConfig {
    pub fn new(lambda: f64, log_clamp: f64) -> Result<Self, RewardError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(RewardError::BadLambda(lambda));
        }
        if !(log_clamp > 0.0 && log_clamp < 1.0) {
            return Err(RewardError::BadClamp(log_clamp));
        }
        Ok(Self { lambda, log_clamp })
    }

    pub fn with_lambda(lambda: f64) -> Result<Self, RewardError> {
        Self::new(lambda, DEFAULT_LOG_CLAMP)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn log_clamp(&self) -> f64 {
        self.log_clamp
    }
}

/// `ln(max(1 - probs[y], clamp))`. Never positive.
pub fn attack_reward(pred: &PredictionVector, label: Label, cfg: &RewardConfig) -> f64 {
    let p_true = pred.probs()[label.index()];
    (1.0 - p_true).max(cfg.log_clamp).ln().min(0.0)
}

/// Exact overlap ratio of a set of boxes as `(intersection, union)` pixel counts.
///
/// The numerator is the area covered by at least two boxes (the union of all
/// pairwise intersections); the denominator is the area covered by any box.
pub fn overlap_counts(boxes: &[PixelBox]) -> (u64, u64) {
    let boxes: Vec<&PixelBox> = boxes.iter().filter(|b| b.area() > 0).collect();
    if boxes.len() < 2 {
        return (0, boxes.iter().map(|b| b.area() as u64).sum());
    }
    let mut xs: Vec<i64> = boxes.iter().flat_map(|b| [b.left, b.right()]).collect();
    let mut ys: Vec<i64> = boxes.iter().flat_map(|b| [b.top, b.bottom()]).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let (mut inter, mut union) = (0u64, 0u64);
    for yw in ys.windows(2) {
        for xw in xs.windows(2) {
            let depth = boxes
                .iter()
                .filter(|b| b.left <= xw[0] && xw[1] <= b.right() && b.top <= yw[0] && yw[1] <= b.bottom())
                .count();
            if depth > 0 {
                let cell = ((xw[1] - xw[0]) * (yw[1] - yw[0])) as u64;
                union += cell;
                if depth >= 2 {
                    inter += cell;
                }
            }
        }
    }
    (inter, union)
}

/// `-IoU` over the frame-0 boxes; `0` exactly when no two boxes overlap.
pub fn iou_penalty(regions: &RegionSet) -> f64 {
    box_iou_penalty(regions.boxes())
}

pub fn box_iou_penalty(boxes: &[PixelBox]) -> f64 {
    match overlap_counts(boxes) {
        (0, _) | (_, 0) => 0.0,
        (i, u) => -(i as f64 / u as f64),
    }
}

/// `r_attack + lambda * r_iou`
pub fn total_reward(r_attack: f64, r_iou: f64, cfg: &RewardConfig) -> f64 {
    r_attack + cfg.lambda * r_iou
}

/// Percentage of all video pixels occluded by BSCs.
pub fn aoa(regions: &RegionSet) -> f64 {
    let [t, h, w] = regions.dims();
    100.0 * regions.covered() as f64 / (t * h * w) as f64
}

/// Per-frame boolean salient masks, row-major `T x H x W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SalientMasks {
    frames: usize,
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl SalientMasks {
    pub fn new(frames: usize, height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), frames * height * width, "mask size mismatch");
        Self {
            frames,
            height,
            width,
            bits,
        }
    }

    pub fn uniform(frames: usize, height: usize, width: usize, value: bool) -> Self {
        Self::new(frames, height, width, vec![value; frames * height * width])
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        let n = self.height * self.width;
        &self.bits[t * n..(t + 1) * n]
    }
}

/// Percentage of all video pixels that are both occluded and salient.
pub fn aoa_star(regions: &RegionSet, salient: &SalientMasks) -> Result<f64, RewardError> {
    if salient.dims() != regions.dims() {
        return Err(RewardError::DimensionMismatch {
            expected: regions.dims(),
            found: salient.dims(),
        });
    }
    let [t, h, w] = regions.dims();
    let hits = regions
        .owners()
        .iter()
        .zip(&salient.bits)
        .filter(|(&o, &s)| s && o != u16::MAX)
        .count();
    Ok(100.0 * hits as f64 / (t * h * w) as f64)
}
