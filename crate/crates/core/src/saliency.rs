//! Sobel gradient-magnitude saliency and quantile-thresholded salient masks.

use std::path::Path;

use thiserror::Error;

use crate::rewards::SalientMasks;
use crate::tensor_io::{load_video, TensorError, VideoClip};

pub const DEFAULT_QUANTILE: f64 = 0.75;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("quantile must lie in [0, 1), got {0}")]
    BadQuantile(f64),
    #[error("mask file: {0}")]
    Tensor(#[from] TensorError),
    #[error("mask dims {found:?} do not match clip dims {expected:?}")]
    DimensionMismatch { expected: [usize; 4], found: [usize; 4] },
    #[error("mask value {0} is neither 0 nor 255")]
    NonBinaryMask(u8),
}

/// Per-pixel saliency of one frame, normalized so the frame maximum is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Sobel magnitude of the channel-mean image with replicate padding.
/// `frame` is `H x W x C`, row-major.
pub fn saliency_map(frame: &[u8], height: usize, width: usize, channels: usize) -> SaliencyMap {
    let mut values = sobel_magnitude(frame, height, width, channels);
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    SaliencyMap::new(height, width, values)
}

fn sobel_magnitude(frame: &[u8], height: usize, width: usize, channels: usize) -> Vec<f64> {
    assert_eq!(frame.len(), height * width * channels);
    let gray: Vec<f64> = frame
        .chunks_exact(channels)
        .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / channels as f64)
        .collect();
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, height as isize - 1) as usize;
        let c = c.clamp(0, width as isize - 1) as usize;
        gray[r * width + c]
    };
    let mut values = Vec::with_capacity(height * width);
    for r in 0..height as isize {
        for c in 0..width as isize {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            values.push((gx * gx + gy * gy).sqrt());
        }
    }
    values
}

/// `true` where the map is at or above its `q`-quantile. With `N` pixels the
/// threshold is the `floor(q * N)`-th smallest value, so ties are included.
pub fn salient_mask(map: &SaliencyMap, q: f64) -> Result<Vec<bool>, SaliencyError> {
    if !(0.0..1.0).contains(&q) {
        return Err(SaliencyError::BadQuantile(q));
    }
    let mut sorted = map.values.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = ((q * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    let threshold = sorted[k];
    Ok(map.values.iter().map(|&v| v >= threshold).collect())
}

/// Source of per-frame salient masks for a clip.
pub trait SaliencyProvider: Send + Sync {
    fn salient_masks(&self, clip: &VideoClip) -> Result<SalientMasks, SaliencyError>;
}

#[derive(Debug, Clone, Copy)]
pub struct SobelSaliency {
    pub quantile: f64,
}

impl Default for SobelSaliency {
    fn default() -> Self {
        Self {
            quantile: DEFAULT_QUANTILE,
        }
    }
}

impl SaliencyProvider for SobelSaliency {
    fn salient_masks(&self, clip: &VideoClip) -> Result<SalientMasks, SaliencyError> {
        let [t, h, w, c] = clip.dims();
        let mut bits = Vec::with_capacity(t * h * w);
        for f in 0..t {
            let map = saliency_map(clip.frame(f), h, w, c);
            bits.extend(salient_mask(&map, self.quantile)?);
        }
        Ok(SalientMasks::new(t, h, w, bits))
    }
}

/// Precomputed masks from a single-channel VTEN file with values 0 / 255.
#[derive(Debug, Clone)]
pub struct FileSaliency {
    masks: SalientMasks,
}

impl FileSaliency {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SaliencyError> {
        Self::from_clip(&load_video(path)?)
    }

    pub fn from_clip(mask: &VideoClip) -> Result<Self, SaliencyError> {
        let [t, h, w, c] = mask.dims();
        if c != 1 {
            return Err(SaliencyError::DimensionMismatch {
                expected: [t, h, w, 1],
                found: mask.dims(),
            });
        }
        let bits = mask
            .pixels()
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                255 => Ok(true),
                other => Err(SaliencyError::NonBinaryMask(other)),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            masks: SalientMasks::new(t, h, w, bits),
        })
    }
}

impl SaliencyProvider for FileSaliency {
    fn salient_masks(&self, clip: &VideoClip) -> Result<SalientMasks, SaliencyError> {
        let [t, h, w, _] = clip.dims();
        if self.masks.dims() != [t, h, w] {
            let [mt, mh, mw] = self.masks.dims();
            return Err(SaliencyError::DimensionMismatch {
                expected: [t, h, w, 1],
                found: [mt, mh, mw, 1],
            });
        }
        Ok(self.masks.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_frame_has_zero_saliency() {
        let map = saliency_map(&[77; 6 * 5 * 3], 6, 5, 3);
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_peaks_next_to_edge() {
        let (h, w, edge) = (6, 10, 4);
        let frame: Vec<u8> = (0..h * w).map(|i| if i % w >= edge { 255 } else { 0 }).collect();
        let map = saliency_map(&frame, h, w, 1);
        for r in 0..h {
            for c in 0..w {
                let v = map.get(r, c);
                if c == edge - 1 || c == edge {
                    assert_eq!(v, 1.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn values_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frame: Vec<u8> = (0..12 * 9 * 3).map(|_| rng.gen()).collect();
        let map = saliency_map(&frame, 12, 9, 3);
        assert!(map.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(map.values().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn quantile_rules() {
        let (h, w) = (5, 7);
        let inc = SaliencyMap::new(h, w, (0..h * w).map(|i| i as f64 / 34.0).collect());
        assert!(salient_mask(&inc, 0.0).unwrap().iter().all(|&b| b));
        let n = salient_mask(&inc, 0.75).unwrap().iter().filter(|&&b| b).count();
        assert_eq!(n, (0.25 * (h * w) as f64).ceil() as usize);
        let flat = SaliencyMap::new(h, w, vec![0.4; h * w]);
        assert!(salient_mask(&flat, 0.9).unwrap().iter().all(|&b| b));
        assert!(salient_mask(&flat, 1.0).is_err());
        assert!(salient_mask(&flat, -0.1).is_err());
    }

    #[test]
    fn raising_quantile_never_adds_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let map = SaliencyMap::new(8, 8, (0..64).map(|_| (rng.gen_range(0..10) as f64) / 9.0).collect());
        let mut prev = salient_mask(&map, 0.0).unwrap();
        for i in 1..100 {
            let cur = salient_mask(&map, i as f64 / 100.0).unwrap();
            assert!(cur.iter().zip(&prev).all(|(&c, &p)| !c || p));
            prev = cur;
        }
    }

    #[test]
    fn translation_equivariant_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (h, w) = (16, 16);
        let base: Vec<u8> = (0..(h + 2) * (w + 2)).map(|_| rng.gen()).collect();
        let crop = |dr: usize, dc: usize| -> Vec<u8> {
            (0..h)
                .flat_map(|r| (0..w).map(move |c| (r, c)))
                .map(|(r, c)| base[(r + dr) * (w + 2) + c + dc])
                .collect()
        };
        let a = sobel_magnitude(&crop(0, 0), h, w, 1);
        let b = sobel_magnitude(&crop(1, 2), h, w, 1);
        // b(r - 1, c - 2) sees the same neighbourhood as a(r, c).
        for r in 2..h - 1 {
            for c in 3..w - 1 {
                assert_eq!(a[r * w + c], b[(r - 1) * w + c - 2], "({r},{c})");
            }
        }
    }

    #[test]
    fn file_masks_must_be_binary() {
        let ok = VideoClip::new(1, 1, 2, 1, vec![0, 255]).unwrap();
        let fs = FileSaliency::from_clip(&ok).unwrap();
        let clip = VideoClip::filled(1, 1, 2, 3, 0).unwrap();
        assert_eq!(fs.salient_masks(&clip).unwrap().bits(), &[false, true]);
        let bad = VideoClip::new(1, 1, 2, 1, vec![0, 7]).unwrap();
        assert!(matches!(
            FileSaliency::from_clip(&bad),
            Err(SaliencyError::NonBinaryMask(7))
        ));
        let wrong = VideoClip::filled(2, 1, 2, 3, 0).unwrap();
        assert!(fs.salient_masks(&wrong).is_err());
    }
}
