use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use super::{attack, AttackConfig, OrchestratorError};
use crate::oracle::OracleHandle;
use crate::tensor_io::{load_video, VideoClip};

pub const CSV_HEADER: &str = "video,success,queries,aoa,aoa_star,r_attack";
pub const NA: &str = "NA";

/// Seed of the `index`-th video of a dataset run with master `seed`.
pub fn video_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One attacked video. `aoa` and `aoa_star` are only defined for successes.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRow {
    pub video: String,
    pub success: bool,
    pub queries: usize,
    pub aoa: Option<f64>,
    pub aoa_star: Option<f64>,
    pub r_attack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VideoOutcome {
    Attacked(VideoRow),
    /// Clean clip not classified as its label.
    Skipped { video: String, predicted: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    /// Fooling rate in percent.
    pub fr: f64,
    pub aoa: Option<f64>,
    pub aoa_star: Option<f64>,
    pub aqn: Option<f64>,
    pub n: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    pub rows: Vec<VideoRow>,
    pub skipped: Vec<String>,
    pub aggregate: Aggregate,
    pub seed: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// FR over all rows; AOA, AOA* and AQN averaged over successes.
pub fn aggregate(rows: &[VideoRow], skipped: usize) -> Aggregate {
    let wins: Vec<&VideoRow> = rows.iter().filter(|r| r.success).collect();
    Aggregate {
        fr: if rows.is_empty() {
            0.0
        } else {
            100.0 * wins.len() as f64 / rows.len() as f64
        },
        aoa: mean(wins.iter().filter_map(|r| r.aoa)),
        aoa_star: mean(wins.iter().filter_map(|r| r.aoa_star)),
        aqn: mean(wins.iter().map(|r| r.queries as f64)),
        n: rows.len(),
        skipped,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

impl VideoRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.video,
            self.success,
            self.queries,
            opt(self.aoa),
            opt(self.aoa_star),
            self.r_attack
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(format!("expected 6 fields, got {}", f.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"));
        let opt_num = |s: &str| if s == NA { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            video: f[0].to_string(),
            success: f[1].parse().map_err(|e| format!("bad flag {:?}: {e}", f[1]))?,
            queries: f[2].parse().map_err(|e| format!("bad count {:?}: {e}", f[2]))?,
            aoa: opt_num(f[3])?,
            aoa_star: opt_num(f[4])?,
            r_attack: num(f[5])?,
        })
    }
}

impl Aggregate {
    pub fn to_json(&self) -> Value {
        json!({
            "fr": self.fr,
            "aoa": self.aoa,
            "aoa_star": self.aoa_star,
            "aqn": self.aqn,
            "n": self.n,
            "skipped": self.skipped,
        })
    }
}

impl DatasetReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.to_csv_line());
        }
        out
    }

    /// Aggregate metrics plus the seed and skipped clips.
    pub fn summary_json(&self, cfg: &AttackConfig) -> Value {
        let mut v = self.aggregate.to_json();
        v["seed"] = json!(self.seed);
        v["strategy"] = json!(cfg.strategy.to_string());
        v["skipped_videos"] = json!(self.skipped);
        v
    }
}

/// Parse an emitted per-video CSV (header line first).
pub fn parse_rows(csv: &str) -> Result<Vec<VideoRow>, String> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines.map(VideoRow::parse_csv_line).collect()
}

/// `filename,label_index` rows; a first line whose label is not an integer is a header.
pub fn read_labels(path: &Path) -> Result<HashMap<String, usize>, OrchestratorError> {
    let text = std::fs::read_to_string(path).map_err(|source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut labels = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| OrchestratorError::Labels {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (name, label) = line
            .split_once(',')
            .ok_or_else(|| err("expected filename,label_index".into()))?;
        match label.trim().parse::<usize>() {
            Ok(l) => {
                if labels.insert(name.trim().to_string(), l).is_some() {
                    return Err(err(format!("duplicate entry for {}", name.trim())));
                }
            }
            Err(_) if labels.is_empty() && i == 0 => continue,
            Err(e) => return Err(err(format!("bad label {label:?}: {e}"))),
        }
    }
    Ok(labels)
}

fn attack_video(
    name: &str,
    clip: &VideoClip,
    label: usize,
    oracle: &OracleHandle,
    cfg: &AttackConfig,
) -> Result<VideoOutcome, OrchestratorError> {
    match attack(clip, label, oracle, cfg) {
        Ok(res) => Ok(VideoOutcome::Attacked(VideoRow {
            video: name.to_string(),
            success: res.success,
            queries: res.queries,
            aoa: res.success.then_some(res.aoa),
            aoa_star: res.success.then_some(res.aoa_star),
            r_attack: res.r_attack,
        })),
        Err(OrchestratorError::CleanMisclassified { predicted, .. }) => {
            log::warn!("skipping {name}: clean clip classified as {predicted}, label {label}");
            Ok(VideoOutcome::Skipped {
                video: name.to_string(),
                predicted,
            })
        }
        Err(e) => Err(e),
    }
}

fn collect(outcomes: Vec<VideoOutcome>, seed: u64) -> DatasetReport {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            VideoOutcome::Attacked(row) => rows.push(row),
            VideoOutcome::Skipped { video, .. } => skipped.push(video),
        }
    }
    DatasetReport {
        aggregate: aggregate(&rows, skipped.len()),
        rows,
        skipped,
        seed,
    }
}

/// Attack in-memory `(name, clip, label)` items in parallel. Video `i` uses
/// seed `video_seed(cfg.seed, i)`.
pub fn evaluate_videos(
    items: &[(String, VideoClip, usize)],
    oracle: &OracleHandle,
    cfg: &AttackConfig,
) -> Result<DatasetReport, OrchestratorError> {
    cfg.validate()?;
    let outcomes = items
        .par_iter()
        .enumerate()
        .map(|(i, (name, clip, label))| {
            let cfg = AttackConfig {
                seed: video_seed(cfg.seed, i),
                ..cfg.clone()
            };
            attack_video(name, clip, *label, oracle, &cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(collect(outcomes, cfg.seed))
}

/// Sorted `.vten` files in `dir`.
pub fn list_videos(dir: &Path) -> Result<Vec<PathBuf>, OrchestratorError> {
    let entries = std::fs::read_dir(dir).map_err(|source| OrchestratorError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut videos: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "vten"))
        .collect();
    videos.sort();
    Ok(videos)
}

/// Attack every clip in `dir`. Labels come from `labels` (default
/// `dir/labels.csv`). Rows in `previous` are reused instead of re-attacking.
pub fn evaluate_dataset(
    dir: &Path,
    labels: Option<&Path>,
    oracle: &OracleHandle,
    cfg: &AttackConfig,
    previous: &[VideoRow],
) -> Result<DatasetReport, OrchestratorError> {
    cfg.validate()?;
    let videos = list_videos(dir)?;
    if videos.is_empty() {
        return Err(OrchestratorError::EmptyDataset(dir.to_path_buf()));
    }
    let label_path = labels.map_or_else(|| dir.join("labels.csv"), Path::to_path_buf);
    let labels = read_labels(&label_path)?;
    let named: Vec<(String, PathBuf, usize)> = videos
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let label = *labels.get(&name).ok_or_else(|| OrchestratorError::MissingLabel(name.clone()))?;
            Ok((name, p, label))
        })
        .collect::<Result<_, OrchestratorError>>()?;
    let done: HashMap<&str, &VideoRow> = previous.iter().map(|r| (r.video.as_str(), r)).collect();

    let outcomes = named
        .par_iter()
        .enumerate()
        .map(|(i, (name, path, label))| {
            if let Some(row) = done.get(name.as_str()) {
                return Ok(VideoOutcome::Attacked((*row).clone()));
            }
            let clip = load_video(path)?;
            let cfg = AttackConfig {
                seed: video_seed(cfg.seed, i),
                ..cfg.for_video(path)?
            };
            log::info!("attacking {name}");
            attack_video(name, &clip, *label, oracle, &cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(collect(outcomes, cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, success: bool, queries: usize, aoa: f64) -> VideoRow {
        VideoRow {
            video: name.into(),
            success,
            queries,
            aoa: success.then_some(aoa),
            aoa_star: success.then_some(aoa / 2.0),
            r_attack: -0.1 * queries as f64,
        }
    }

    #[test]
    fn aggregate_over_successes() {
        let rows = [row("a", true, 10, 4.0), row("b", false, 99, 0.0), row("c", true, 30, 8.0)];
        let agg = aggregate(&rows, 1);
        assert!((agg.fr - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!((agg.aoa, agg.aoa_star, agg.aqn), (Some(6.0), Some(3.0), Some(20.0)));
        assert_eq!((agg.n, agg.skipped), (3, 1));
        let none = aggregate(&[row("b", false, 5, 0.0)], 0);
        assert_eq!((none.fr, none.aoa, none.aqn), (0.0, None, None));
        assert_eq!(none.to_json()["aoa"], Value::Null);
    }

    #[test]
    fn csv_round_trip() {
        let report = DatasetReport {
            rows: vec![row("a.vten", true, 7, 1.0 / 3.0), row("b.vten", false, 5, 0.0)],
            skipped: vec![],
            aggregate: aggregate(&[], 0),
            seed: 0,
        };
        let csv = report.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.contains("b.vten,false,5,NA,NA,"));
        assert_eq!(parse_rows(&csv).unwrap(), report.rows);
    }

    #[test]
    fn labels_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        std::fs::write(&p, "filename,label_index\na.vten,3\n\nb.vten, 1\n").unwrap();
        let l = read_labels(&p).unwrap();
        assert_eq!((l["a.vten"], l["b.vten"]), (3, 1));
        std::fs::write(&p, "a.vten,2\n").unwrap();
        assert_eq!(read_labels(&p).unwrap()["a.vten"], 2);
        std::fs::write(&p, "a.vten,2\nb.vten,x\n").unwrap();
        assert!(matches!(read_labels(&p), Err(OrchestratorError::Labels { line: 2, .. })));
    }

    #[test]
    fn seeds_differ_per_video() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| video_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(video_seed(7, 0), video_seed(8, 0));
    }
}
