//! The black-box target: a query-counting prediction interface over a
//! [`Classifier`] backend.

mod builtin;
mod subprocess;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::tensor_io::{PredictionVector, VideoClip};

pub use builtin::{toy_classifier, ToyClassifier, ToyClassifierSpec, DEFAULT_TAU};
pub use subprocess::{subprocess_oracle, SubprocessClassifier, DEFAULT_TIMEOUT};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("clip dims {found:?} do not match oracle dims {expected:?}")]
    DimensionMismatch { expected: [usize; 4], found: [usize; 4] },
    #[error("failed to spawn oracle process: {0}")]
    Spawn(std::io::Error),
    #[error("oracle handshake failed: {0}")]
    Handshake(String),
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    #[error("oracle reported an error: {0}")]
    Remote(String),
    #[error("oracle did not answer within {0:?}")]
    Timeout(Duration),
    #[error("oracle process exited ({0})")]
    Died(String),
    #[error("oracle i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("oracle backend does not provide captions")]
    CaptionUnsupported,
    #[error("invalid toy classifier: {0}")]
    InvalidSpec(String),
}

/// A black-box video classifier.
pub trait Classifier: Send + Sync {
    /// Expected `[T, H, W, C]`.
    fn dims(&self) -> [usize; 4];
    fn num_classes(&self) -> usize;
    fn classify(&self, clip: &VideoClip) -> Result<PredictionVector, OracleError>;
    fn caption(&self, _clip: &VideoClip) -> Result<String, OracleError> {
        Err(OracleError::CaptionUnsupported)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Builtin,
    Subprocess,
    Custom,
}

/// Pre-prediction clip transform, e.g. an input-smoothing defense.
pub type InputTransform = Arc<dyn Fn(&VideoClip) -> VideoClip + Send + Sync>;

/// Handle around a classifier that counts every prediction request.
pub struct OracleHandle {
    backend: Arc<dyn Classifier>,
    kind: BackendKind,
    queries: AtomicU64,
    transform: Option<InputTransform>,
}

impl std::fmt::Debug for OracleHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleHandle")
            .field("kind", &self.kind)
            .field("dims", &self.backend.dims())
            .field("queries", &self.queries())
            .field("transform", &self.transform.is_some())
            .finish()
    }
}

impl OracleHandle {
    pub fn new(backend: Arc<dyn Classifier>, kind: BackendKind) -> Self {
        Self {
            backend,
            kind,
            queries: AtomicU64::new(0),
            transform: None,
        }
    }

    /// Wrap any classifier (test doubles, in-process models).
    pub fn custom(backend: impl Classifier + 'static) -> Self {
        Self::new(Arc::new(backend), BackendKind::Custom)
    }

    pub fn with_transform(mut self, transform: InputTransform) -> Self {
        self.transform = Some(transform);
        self
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    pub fn dims(&self) -> [usize; 4] {
        self.backend.dims()
    }

    pub fn num_classes(&self) -> usize {
        self.backend.num_classes()
    }

    /// Number of `predict` calls so far.
    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    pub fn predict(&self, clip: &VideoClip) -> Result<PredictionVector, OracleError> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        if clip.dims() != self.backend.dims() {
            return Err(OracleError::DimensionMismatch {
                expected: self.backend.dims(),
                found: clip.dims(),
            });
        }
        match &self.transform {
            Some(f) => self.backend.classify(&f(clip)),
            None => self.backend.classify(clip),
        }
    }

    /// Caption text from the backend, if it offers one. Not counted as a query.
    pub fn caption(&self, clip: &VideoClip) -> Result<String, OracleError> {
        self.backend.caption(clip)
    }
}

/// Numerically stable softmax of `tau * scores`.
pub fn softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().map(|s| tau * s).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (tau * s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f64>);

    impl Classifier for Fixed {
        fn dims(&self) -> [usize; 4] {
            [2, 3, 3, 1]
        }
        fn num_classes(&self) -> usize {
            self.0.len()
        }
        fn classify(&self, _clip: &VideoClip) -> Result<PredictionVector, OracleError> {
            Ok(PredictionVector::new(self.0.clone()).unwrap())
        }
    }

    #[test]
    fn counts_calls_under_concurrency() {
        let oracle = OracleHandle::custom(Fixed(vec![0.5, 0.5]));
        let clip = VideoClip::filled(2, 3, 3, 1, 0).unwrap();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..250 {
                        oracle.predict(&clip).unwrap();
                    }
                });
            }
        });
        assert_eq!(oracle.queries(), 2000);
    }

    #[test]
    fn rejects_wrong_dims_but_counts() {
        let oracle = OracleHandle::custom(Fixed(vec![0.5, 0.5]));
        let clip = VideoClip::filled(2, 3, 4, 1, 0).unwrap();
        assert!(matches!(
            oracle.predict(&clip),
            Err(OracleError::DimensionMismatch { .. })
        ));
        assert_eq!(oracle.queries(), 1);
    }

    #[test]
    fn transform_runs_before_backend() {
        struct Bright;
        impl Classifier for Bright {
            fn dims(&self) -> [usize; 4] {
                [1, 1, 1, 1]
            }
            fn num_classes(&self) -> usize {
                2
            }
            fn classify(&self, clip: &VideoClip) -> Result<PredictionVector, OracleError> {
                let p = if clip.pixels()[0] > 100 { 1.0 } else { 0.0 };
                Ok(PredictionVector::new(vec![1.0 - p, p]).unwrap())
            }
        }
        let oracle = OracleHandle::custom(Bright).with_transform(Arc::new(|c: &VideoClip| {
            VideoClip::filled(1, 1, 1, 1, 255 - c.pixels()[0]).unwrap()
        }));
        let dark = VideoClip::filled(1, 1, 1, 1, 0).unwrap();
        assert_eq!(oracle.predict(&dark).unwrap().argmax(), 1);
        assert_eq!(dark.pixels(), &[0]);
    }

    #[test]
    fn softmax_limits() {
        let p = softmax(&[0.3, -0.2, 0.9], 0.0);
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&[1000.0, 0.0], 1.0);
        assert_eq!(p, vec![1.0, 0.0]);
    }
}
