//! Deterministic template-matching video classifier.
//!
//! The clip is averaged over frames and channels, centred and L2-normalized, and
//! compared to each class template by cosine similarity; probabilities are
//! `softmax(tau * similarity)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{softmax, BackendKind, Classifier, OracleError, OracleHandle};
use crate::tensor_io::{PredictionVector, VideoClip};

pub const DEFAULT_TAU: f64 = 20.0;

/// Class templates (centred, unit L2 norm) over an `H x W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifierSpec {
    height: usize,
    width: usize,
    templates: Vec<Vec<f64>>,
    tau: f64,
    seed: u64,
}

fn center_normalize(v: &mut [f64]) -> bool {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Smooth random field in `[-1, 1]`: a sum of Gaussian blobs of random sign.
fn blob_pattern(height: usize, width: usize, rng: &mut impl Rng) -> Vec<f64> {
    let blobs = 10;
    let scale = height.min(width) as f64;
    let specs: Vec<(f64, f64, f64, f64)> = (0..blobs)
        .map(|_| {
            let cy = rng.gen_range(0.0..height as f64);
            let cx = rng.gen_range(0.0..width as f64);
            let sigma = rng.gen_range(0.08..0.2) * scale;
            let amp = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.5..1.0);
            (cy, cx, sigma, amp)
        })
        .collect();
    let mut out = vec![0.0; height * width];
    for (i, v) in out.iter_mut().enumerate() {
        let (r, c) = ((i / width) as f64, (i % width) as f64);
        *v = specs
            .iter()
            .map(|&(cy, cx, s, a)| a * (-((r - cy).powi(2) + (c - cx).powi(2)) / (2.0 * s * s)).exp())
            .sum();
    }
    let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v /= max);
    }
    out
}

impl ToyClassifierSpec {
    /// `num_classes` smooth random templates drawn from `seed`.
    pub fn seeded(num_classes: usize, height: usize, width: usize, tau: f64, seed: u64) -> Result<Self, OracleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patterns = (0..num_classes).map(|_| blob_pattern(height, width, &mut rng)).collect();
        let mut spec = Self::from_templates(height, width, patterns, tau)?;
        spec.seed = seed;
        Ok(spec)
    }

    /// Templates from raw `H x W` patterns; each is centred and normalized.
    pub fn from_templates(height: usize, width: usize, mut templates: Vec<Vec<f64>>, tau: f64) -> Result<Self, OracleError> {
        if templates.len() < 2 {
            return Err(OracleError::InvalidSpec(format!("need >= 2 classes, got {}", templates.len())));
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(OracleError::InvalidSpec(format!("bad temperature {tau}")));
        }
        for (k, t) in templates.iter_mut().enumerate() {
            if t.len() != height * width {
                return Err(OracleError::InvalidSpec(format!("template {k} has {} values", t.len())));
            }
            if !center_normalize(t) {
                return Err(OracleError::InvalidSpec(format!("template {k} is constant")));
            }
        }
        Ok(Self {
            height,
            width,
            templates,
            tau,
            seed: 0,
        })
    }

    /// Templates as per-class means of labelled sample clips.
    pub fn from_class_means(samples: &[(VideoClip, usize)], num_classes: usize, tau: f64) -> Result<Self, OracleError> {
        let first = samples
            .first()
            .ok_or_else(|| OracleError::InvalidSpec("no samples".into()))?;
        let [_, h, w, _] = first.0.dims();
        let mut sums = vec![vec![0.0; h * w]; num_classes];
        let mut counts = vec![0usize; num_classes];
        for (clip, label) in samples {
            if *label >= num_classes {
                return Err(OracleError::InvalidSpec(format!("label {label} >= {num_classes}")));
            }
            let m = mean_frame(clip);
            if m.len() != h * w {
                return Err(OracleError::InvalidSpec("sample dims differ".into()));
            }
            sums[*label].iter_mut().zip(&m).for_each(|(s, v)| *s += v);
            counts[*label] += 1;
        }
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(OracleError::InvalidSpec(format!("class {k} has no samples")));
        }
        Self::from_templates(h, w, sums, tau)
    }

    pub fn num_classes(&self) -> usize {
        self.templates.len()
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn templates(&self) -> &[Vec<f64>] {
        &self.templates
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// Mean over frames and channels, `H x W`.
fn mean_frame(clip: &VideoClip) -> Vec<f64> {
    let [t, h, w, c] = clip.dims();
    let mut acc = vec![0u32; h * w];
    for frame in clip.pixels().chunks_exact(h * w * c) {
        for (a, px) in acc.iter_mut().zip(frame.chunks_exact(c)) {
            *a += px.iter().map(|&v| v as u32).sum::<u32>();
        }
    }
    let n = (t * c) as f64;
    acc.into_iter().map(|v| v as f64 / n).collect()
}

#[derive(Debug, Clone)]
pub struct ToyClassifier {
    spec: ToyClassifierSpec,
    frames: usize,
    channels: usize,
}

impl ToyClassifier {
    pub fn new(spec: ToyClassifierSpec, frames: usize, channels: usize) -> Self {
        Self {
            spec,
            frames,
            channels,
        }
    }

    pub fn spec(&self) -> &ToyClassifierSpec {
        &self.spec
    }

    /// Cosine similarity of the clip's centred mean frame to every template.
    pub fn similarities(&self, clip: &VideoClip) -> Vec<f64> {
        let mut m = mean_frame(clip);
        if !center_normalize(&mut m) {
            return vec![0.0; self.spec.num_classes()];
        }
        self.spec
            .templates
            .iter()
            .map(|t| t.iter().zip(&m).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl Classifier for ToyClassifier {
    fn dims(&self) -> [usize; 4] {
        [self.frames, self.spec.height, self.spec.width, self.channels]
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    fn classify(&self, clip: &VideoClip) -> Result<PredictionVector, OracleError> {
        let probs = softmax(&self.similarities(clip), self.spec.tau);
        PredictionVector::new(probs).map_err(|e| OracleError::Protocol(e.to_string()))
    }
}

/// Oracle handle over the builtin classifier for clips of `frames x H x W x channels`.
pub fn toy_classifier(spec: ToyClassifierSpec, frames: usize, channels: usize) -> OracleHandle {
    OracleHandle::new(
        std::sync::Arc::new(ToyClassifier::new(spec, frames, channels)),
        BackendKind::Builtin,
    )
}
