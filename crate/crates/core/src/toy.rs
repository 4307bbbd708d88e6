//! Seeded synthetic video suite for the builtin template classifier.
//!
//! Class `k` clips are `128 + contrast * P_k` plus static and per-frame uniform
//! noise, where `P_k` is the class template rescaled to `[-1, 1]`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::{toy_classifier, OracleError, OracleHandle, ToyClassifierSpec, DEFAULT_TAU};
use crate::tensor_io::{save_video, TensorError, VideoClip};

#[derive(Debug, Clone, PartialEq)]
pub struct ToySuiteConfig {
    pub classes: usize,
    pub videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub contrast: f64,
    pub static_noise: f64,
    pub frame_noise: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for ToySuiteConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            videos: 24,
            frames: 16,
            height: 64,
            width: 64,
            channels: 3,
            contrast: 11.0,
            static_noise: 4.0,
            frame_noise: 8.0,
            tau: DEFAULT_TAU,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToySuite {
    pub config: ToySuiteConfig,
    pub spec: ToyClassifierSpec,
    /// `(clip, label)` in generation order; video `i` has label `i % classes`.
    pub clips: Vec<(VideoClip, usize)>,
}

/// Template `k` rescaled so its largest magnitude is 1.
fn unit_pattern(spec: &ToyClassifierSpec, k: usize) -> Vec<f64> {
    let t = &spec.templates()[k];
    let max = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    t.iter().map(|v| v / max).collect()
}

fn noise(rng: &mut impl Rng, amp: f64) -> f64 {
    if amp > 0.0 {
        rng.gen_range(-amp..=amp)
    } else {
        0.0
    }
}

impl ToySuite {
    pub fn generate(config: ToySuiteConfig) -> Result<Self, OracleError> {
        let spec = ToyClassifierSpec::seeded(config.classes, config.height, config.width, config.tau, config.seed)?;
        let patterns: Vec<Vec<f64>> = (0..config.classes).map(|k| unit_pattern(&spec, k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c11b);
        let [t, h, w, c] = [config.frames, config.height, config.width, config.channels];
        let clips = (0..config.videos)
            .map(|i| {
                let label = i % config.classes;
                let base: Vec<f64> = patterns[label]
                    .iter()
                    .flat_map(|&p| std::iter::repeat(128.0 + config.contrast * p).take(c))
                    .collect();
                let still: Vec<f64> = base.iter().map(|b| b + noise(&mut rng, config.static_noise)).collect();
                let mut pixels = Vec::with_capacity(t * h * w * c);
                for _ in 0..t {
                    pixels.extend(
                        still
                            .iter()
                            .map(|v| (v + noise(&mut rng, config.frame_noise)).round().clamp(0.0, 255.0) as u8),
                    );
                }
                (VideoClip::new(t, h, w, c, pixels).expect("valid dims"), label)
            })
            .collect();
        Ok(Self { config, spec, clips })
    }

    pub fn oracle(&self) -> OracleHandle {
        toy_classifier(self.spec.clone(), self.config.frames, self.config.channels)
    }

    /// File name of video `i`.
    pub fn file_name(i: usize) -> String {
        format!("video_{i:03}.vten")
    }

    /// Write every clip as `video_NNN.vten` plus `labels.csv` into `dir`.
    pub fn write_dataset(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, TensorError> {
        let dir = dir.as_ref();
        let io = |source| TensorError::Io {
            path: dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut labels = String::from("filename,label_index\n");
        let mut paths = Vec::with_capacity(self.clips.len());
        for (i, (clip, label)) in self.clips.iter().enumerate() {
            let name = Self::file_name(i);
            let path = dir.join(&name);
            save_video(clip, &path)?;
            labels.push_str(&format!("{name},{label}\n"));
            paths.push(path);
        }
        std::fs::write(dir.join("labels.csv"), labels).map_err(io)?;
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_is_clean_and_deterministic() {
        let suite = ToySuite::generate(ToySuiteConfig::default()).unwrap();
        let oracle = suite.oracle();
        assert_eq!(suite.clips.len(), 24);
        for (clip, label) in &suite.clips {
            assert_eq!(clip.dims(), [16, 64, 64, 3]);
            assert_eq!(oracle.predict(clip).unwrap().argmax(), *label);
        }
        let again = ToySuite::generate(ToySuiteConfig::default()).unwrap();
        assert!(suite.clips.iter().zip(&again.clips).all(|(a, b)| a == b));
        let other = ToySuite::generate(ToySuiteConfig {
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(suite.clips[0].0, other.clips[0].0);
    }

    #[test]
    fn dataset_files() {
        let dir = tempfile::tempdir().unwrap();
        let suite = ToySuite::generate(ToySuiteConfig {
            videos: 3,
            frames: 2,
            height: 8,
            width: 8,
            ..Default::default()
        })
        .unwrap();
        let paths = suite.write_dataset(dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let labels = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
        assert_eq!(labels.lines().nth(2), Some("video_001.vten,1"));
        assert_eq!(crate::tensor_io::load_video(&paths[2]).unwrap(), suite.clips[2].0);
    }
}
