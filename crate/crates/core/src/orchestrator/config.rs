use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::overlay::{DEFAULT_COLOR, DEFAULT_FONT_NAME};
use crate::rewards::{DEFAULT_LAMBDA, DEFAULT_LOG_CLAMP};
use crate::saliency::DEFAULT_QUANTILE;

pub const DEFAULT_M: usize = 4;
pub const DEFAULT_FONT_SIZE: usize = 9;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_MAX_QUERIES: usize = 50_000;
pub const DEFAULT_TEXT: &str = "lol";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Rl,
    Bh,
    Random,
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rl" => Ok(Self::Rl),
            "bh" => Ok(Self::Bh),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown strategy {other:?} (expected rl, bh or random)")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rl => "rl",
            Self::Bh => "bh",
            Self::Random => "random",
        })
    }
}

/// Where BSC text comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextSource {
    /// One string shared by all BSCs, or exactly `m` strings.
    Literal(Vec<String>),
    /// A text file, or a directory holding `<video stem>.txt`. Each non-empty
    /// line is one text; one line is shared by all BSCs.
    File(PathBuf),
    /// Caption from the oracle backend.
    Caption,
}

impl Default for TextSource {
    fn default() -> Self {
        Self::Literal(vec![DEFAULT_TEXT.to_string()])
    }
}

/// Source of the salient masks used for AOA* and success tie-breaking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencySource {
    Sobel,
    /// A mask VTEN file, or a directory holding `<video stem>.vten` masks.
    File(PathBuf),
}

impl FromStr for SaliencySource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sobel" => Ok(Self::Sobel),
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(Self::File(PathBuf::from(path))),
                _ => Err(format!("unknown saliency source {s:?} (expected sobel or file:<path>)")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub m: usize,
    pub font_size: usize,
    pub lambda: f64,
    pub font: String,
    pub batch: usize,
    pub max_queries: usize,
    pub strategy: Strategy,
    /// Candidate budget for the random and BH baselines; `max_queries` when unset.
    pub match_queries: Option<usize>,
    pub color: u8,
    pub seed: u64,
    pub text: TextSource,
    pub baseline: bool,
    pub saliency: SaliencySource,
    pub quantile: f64,
    pub log_clamp: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            font_size: DEFAULT_FONT_SIZE,
            lambda: DEFAULT_LAMBDA,
            font: DEFAULT_FONT_NAME.to_string(),
            batch: DEFAULT_BATCH,
            max_queries: DEFAULT_MAX_QUERIES,
            strategy: Strategy::Rl,
            match_queries: None,
            color: DEFAULT_COLOR,
            seed: 0,
            text: TextSource::default(),
            baseline: false,
            saliency: SaliencySource::Sobel,
            quantile: DEFAULT_QUANTILE,
            log_clamp: DEFAULT_LOG_CLAMP,
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, OrchestratorError> {
    let text = std::fs::read_to_string(path).map_err(|source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn stem(video: &Path) -> String {
    video
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::InvalidConfig(m));
        if self.m == 0 {
            return bad("m must be >= 1".into());
        }
        if self.font_size == 0 {
            return bad("font size must be >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if self.strategy == Strategy::Rl && self.max_queries < self.batch {
            return bad(format!(
                "max queries {} is smaller than one batch of {}",
                self.max_queries, self.batch
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.quantile) {
            return bad(format!("quantile must be in [0, 1), got {}", self.quantile));
        }
        if let TextSource::Literal(texts) = &self.text {
            if texts.len() != 1 && texts.len() != self.m {
                return bad(format!("{} texts given for {} BSCs", texts.len(), self.m));
            }
        }
        Ok(())
    }

    /// Candidate budget of the configured strategy.
    pub fn budget(&self) -> usize {
        match self.strategy {
            Strategy::Rl => self.max_queries,
            Strategy::Bh | Strategy::Random => self.match_queries.unwrap_or(self.max_queries),
        }
    }

    /// Resolve per-video file sources for the clip stored at `video`.
    pub fn for_video(&self, video: &Path) -> Result<AttackConfig, OrchestratorError> {
        let mut cfg = self.clone();
        if let TextSource::File(path) = &self.text {
            let file = if path.is_dir() {
                path.join(format!("{}.txt", stem(video)))
            } else {
                path.clone()
            };
            let lines = read_lines(&file)?;
            if lines.is_empty() {
                return Err(OrchestratorError::InvalidConfig(format!(
                    "text file {} is empty",
                    file.display()
                )));
            }
            cfg.text = TextSource::Literal(lines);
        }
        if let SaliencySource::File(path) = &self.saliency {
            if path.is_dir() {
                cfg.saliency = SaliencySource::File(path.join(format!("{}.vten", stem(video))));
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = AttackConfig::default();
        assert_eq!((cfg.m, cfg.font_size, cfg.lambda), (4, 9, 1e-3));
        assert_eq!(cfg.font, "DejaVuSerif-like");
        cfg.validate().unwrap();
    }

    #[test]
    fn json_fills_missing_fields() {
        let cfg: AttackConfig = serde_json::from_str(r#"{"m": 2, "strategy": "random"}"#).unwrap();
        assert_eq!(cfg.m, 2);
        assert_eq!(cfg.strategy, Strategy::Random);
        assert_eq!(cfg.batch, DEFAULT_BATCH);
        assert!(serde_json::from_str::<AttackConfig>(r#"{"bogus": 1}"#).is_err());
        let round: AttackConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn invalid_configs() {
        let cases = [
            AttackConfig { m: 0, ..Default::default() },
            AttackConfig { batch: 0, ..Default::default() },
            AttackConfig { max_queries: 8, batch: 16, ..Default::default() },
            AttackConfig { text: TextSource::Literal(vec!["a".into(), "b".into()]), ..Default::default() },
        ];
        for cfg in cases {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let random_small = AttackConfig {
            max_queries: 8,
            batch: 16,
            strategy: Strategy::Random,
            ..Default::default()
        };
        random_small.validate().unwrap();
    }

    #[test]
    fn text_files_resolve_per_video() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("clip.txt"), "hello\n\nworld\n").unwrap();
        let cfg = AttackConfig {
            m: 2,
            text: TextSource::File(dir.path().to_path_buf()),
            ..Default::default()
        };
        let resolved = cfg.for_video(Path::new("/data/clip.vten")).unwrap();
        assert_eq!(resolved.text, TextSource::Literal(vec!["hello".into(), "world".into()]));
        assert!(cfg.for_video(Path::new("/data/other.vten")).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("bh".parse::<Strategy>().unwrap(), Strategy::Bh);
        assert!("sgd".parse::<Strategy>().is_err());
        assert_eq!(
            "file:/tmp/m.vten".parse::<SaliencySource>().unwrap(),
            SaliencySource::File("/tmp/m.vten".into())
        );
        assert!("file:".parse::<SaliencySource>().is_err());
    }
}
