//! Per-video attack loop, dataset evaluation and hyperparameter grids.
//!
//! Within an RL epoch the `B` sampled candidates are rendered up front and then
//! queried in ascending `(AOA*, index)` order. The first success is therefore
//! the least-salient success of the epoch, and no query is spent after it.

mod config;
mod dataset;
mod grid;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent::{reinforce_step, sample_batch, ActionSpace, Adam, AgentError, AgentParams, AgentShape, DEFAULT_LR};
use crate::oracle::{OracleError, OracleHandle};
use crate::overlay::{blend, rasterize, regions_for, BscPlacement, FontAtlas, OverlayError, RegionSet};
use crate::rewards::{aoa, aoa_star, attack_reward, box_iou_penalty, total_reward, RewardConfig, RewardError, SalientMasks};
use crate::saliency::{FileSaliency, SaliencyError, SaliencyProvider, SobelSaliency};
use crate::search::{basin_hopping, random_search, BhConfig, Evaluation, Objective};
use crate::tensor_io::{Label, TensorError, VideoClip};

pub use config::{
    AttackConfig, SaliencySource, Strategy, TextSource, DEFAULT_BATCH, DEFAULT_FONT_SIZE, DEFAULT_M,
    DEFAULT_MAX_QUERIES, DEFAULT_TEXT,
};
pub use dataset::{
    aggregate, evaluate_dataset, evaluate_videos, list_videos, parse_rows, read_labels, video_seed, Aggregate,
    DatasetReport, VideoOutcome, VideoRow, CSV_HEADER, NA,
};
pub use grid::{grid_csv, grid_over, grid_search, GridAxis, GridRow, GRID_HEADER};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("clean clip is classified as {predicted}, not its label {label}")]
    CleanMisclassified { label: usize, predicted: usize },
    #[error("oracle failed after {queries} queries: {source}")]
    Oracle {
        queries: usize,
        #[source]
        source: OracleError,
    },
    #[error("clip dims {clip:?} do not match oracle dims {oracle:?}")]
    DimensionMismatch { clip: [usize; 4], oracle: [usize; 4] },
    #[error("label {label} outside the oracle's {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset {0} contains no .vten clips")]
    EmptyDataset(PathBuf),
    #[error("labels file {path}, line {line}: {message}")]
    Labels { path: PathBuf, line: usize, message: String },
    #[error("no label for {0}")]
    MissingLabel(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

impl OrchestratorError {
    /// Candidate queries spent before an oracle failure.
    pub fn queries(&self) -> Option<usize> {
        match self {
            Self::Oracle { queries, .. } => Some(*queries),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub success: bool,
    /// Adversarial clip, present iff `success`.
    pub clip: Option<VideoClip>,
    /// The successful placements, or the best-reward placements on failure.
    pub placements: Vec<BscPlacement>,
    pub texts: Vec<String>,
    /// Candidate queries.
    pub queries: usize,
    /// All oracle calls made by the attack: the clean check plus `queries`.
    pub oracle_calls: usize,
    pub r_attack: f64,
    pub r_iou: f64,
    pub aoa: f64,
    pub aoa_star: f64,
    /// Mean reward per epoch (per block of `B` queries for the baselines).
    pub reward_trace: Vec<f64>,
    pub strategy: Strategy,
}

impl AttackResult {
    pub fn metrics_json(&self) -> Value {
        json!({
            "success": self.success,
            "strategy": self.strategy.to_string(),
            "queries": self.queries,
            "oracle_calls": self.oracle_calls,
            "r_attack": self.r_attack,
            "r_iou": self.r_iou,
            "aoa": self.aoa,
            "aoa_star": self.aoa_star,
            "texts": self.texts,
            "placements": self.placements.iter().map(|p| json!({"u": p.u, "v": p.v, "alpha": p.alpha})).collect::<Vec<_>>(),
            "reward_trace": self.reward_trace,
        })
    }
}

/// Everything fixed for one video.
struct Scene<'a> {
    clip: &'a VideoClip,
    label: Label,
    oracle: &'a OracleHandle,
    glyphs: Vec<crate::overlay::GlyphMask>,
    space: ActionSpace,
    salient: SalientMasks,
    color: Vec<u8>,
    rewards: RewardConfig,
    queries: AtomicUsize,
}

struct Rendered {
    placements: Vec<BscPlacement>,
    regions: RegionSet,
    r_iou: f64,
    aoa_star: f64,
    adversarial: VideoClip,
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    r_attack: f64,
    reward: f64,
    success: bool,
}

impl Scene<'_> {
    fn render(&self, values: &[i64]) -> Result<Rendered, OrchestratorError> {
        let placements = self.space.placements_from_values(values);
        let [t, h, w, _] = self.clip.dims();
        let regions = regions_for(&placements, &self.glyphs, t, h, w)?;
        let alphas: Vec<u8> = placements.iter().map(|p| p.alpha).collect();
        let adversarial = blend(self.clip, &regions, &self.color, &alphas)?;
        Ok(Rendered {
            r_iou: box_iou_penalty(regions.boxes()),
            aoa_star: aoa_star(&regions, &self.salient)?,
            placements,
            regions,
            adversarial,
        })
    }

    fn query(&self, cand: &Rendered) -> Result<Scored, OrchestratorError> {
        let spent = self.queries.fetch_add(1, Ordering::SeqCst);
        let pred = self
            .oracle
            .predict(&cand.adversarial)
            .map_err(|source| OrchestratorError::Oracle { queries: spent, source })?;
        let r_attack = attack_reward(&pred, self.label, &self.rewards);
        Ok(Scored {
            r_attack,
            reward: total_reward(r_attack, cand.r_iou, &self.rewards),
            success: pred.argmax() != self.label.index() && cand.r_iou == 0.0,
        })
    }

    fn queries(&self) -> usize {
        self.queries.load(Ordering::SeqCst)
    }

    fn finish(
        &self,
        cfg: &AttackConfig,
        texts: Vec<String>,
        values: &[i64],
        scored: Scored,
        reward_trace: Vec<f64>,
    ) -> Result<AttackResult, OrchestratorError> {
        let cand = self.render(values)?;
        Ok(AttackResult {
            success: scored.success,
            clip: scored.success.then_some(cand.adversarial),
            placements: cand.placements,
            texts,
            queries: self.queries(),
            oracle_calls: self.queries() + 1,
            r_attack: scored.r_attack,
            r_iou: cand.r_iou,
            aoa: aoa(&cand.regions),
            aoa_star: cand.aoa_star,
            reward_trace,
            strategy: cfg.strategy,
        })
    }
}

fn resolve_texts(cfg: &AttackConfig, clip: &VideoClip, oracle: &OracleHandle) -> Result<Vec<String>, OrchestratorError> {
    let texts = match &cfg.text {
        TextSource::Literal(texts) => texts.clone(),
        TextSource::File(_) => match &cfg.for_video(std::path::Path::new(""))?.text {
            TextSource::Literal(texts) => texts.clone(),
            _ => unreachable!("file sources resolve to literals"),
        },
        TextSource::Caption => vec![oracle
            .caption(clip)
            .map_err(|source| OrchestratorError::Oracle { queries: 0, source })?],
    };
    match texts.len() {
        1 => Ok(vec![texts[0].clone(); cfg.m]),
        n if n == cfg.m => Ok(texts),
        n => Err(OrchestratorError::InvalidConfig(format!("{n} texts given for {} BSCs", cfg.m))),
    }
}

fn salient_masks(cfg: &AttackConfig, clip: &VideoClip) -> Result<SalientMasks, OrchestratorError> {
    Ok(match &cfg.saliency {
        SaliencySource::Sobel => SobelSaliency { quantile: cfg.quantile }.salient_masks(clip)?,
        SaliencySource::File(path) => FileSaliency::load(path)?.salient_masks(clip)?,
    })
}

fn block_means(rewards: &[f64], block: usize) -> Vec<f64> {
    rewards
        .chunks(block.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Attack one clip. The clean clip is checked first (one oracle call, reported
/// in `oracle_calls` but not in `queries`).
pub fn attack(
    clip: &VideoClip,
    label: usize,
    oracle: &OracleHandle,
    cfg: &AttackConfig,
) -> Result<AttackResult, OrchestratorError> {
    cfg.validate()?;
    if clip.dims() != oracle.dims() {
        return Err(OrchestratorError::DimensionMismatch {
            clip: clip.dims(),
            oracle: oracle.dims(),
        });
    }
    let label = Label::new(label, oracle.num_classes()).map_err(|_| OrchestratorError::LabelOutOfRange {
        label,
        classes: oracle.num_classes(),
    })?;
    let clean = oracle
        .predict(clip)
        .map_err(|source| OrchestratorError::Oracle { queries: 0, source })?;
    if clean.argmax() != label.index() {
        return Err(OrchestratorError::CleanMisclassified {
            label: label.index(),
            predicted: clean.argmax(),
        });
    }

    let texts = resolve_texts(cfg, clip, oracle)?;
    let atlas = FontAtlas::by_name(&cfg.font)?;
    let glyphs = texts
        .iter()
        .map(|t| rasterize(t, &atlas, cfg.font_size))
        .collect::<Result<Vec<_>, _>>()?;
    let [_, h, w, c] = clip.dims();
    let dims: Vec<(usize, usize)> = glyphs.iter().map(|g| (g.width(), g.height())).collect();
    let scene = Scene {
        clip,
        label,
        oracle,
        space: ActionSpace::for_bscs(&dims, h, w)?,
        glyphs,
        salient: salient_masks(cfg, clip)?,
        color: vec![cfg.color; c],
        rewards: RewardConfig::new(cfg.lambda, cfg.log_clamp)?,
        queries: AtomicUsize::new(0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.strategy {
        Strategy::Rl => attack_rl(&scene, cfg, texts, &mut rng),
        Strategy::Random | Strategy::Bh => attack_search(&scene, cfg, texts, &mut rng),
    }
}

fn attack_rl(
    scene: &Scene<'_>,
    cfg: &AttackConfig,
    texts: Vec<String>,
    rng: &mut ChaCha8Rng,
) -> Result<AttackResult, OrchestratorError> {
    let mut params = AgentParams::init(AgentShape::for_space(&scene.space), rng.next_u64());
    let mut opt = Adam::new(params.as_slice().len(), DEFAULT_LR);
    let mut trace = Vec::new();
    let mut best: Option<(Vec<i64>, Scored)> = None;

    while scene.queries() + cfg.batch <= cfg.max_queries {
        let seqs = sample_batch(&params, &scene.space, cfg.batch, rng)?;
        let values: Vec<Vec<i64>> = seqs.iter().map(|s| scene.space.decode(&s.actions)).collect();
        let rendered = values
            .par_iter()
            .map(|v| scene.render(v))
            .collect::<Result<Vec<_>, _>>()?;
        let mut order: Vec<usize> = (0..rendered.len()).collect();
        order.sort_by(|&a, &b| rendered[a].aoa_star.total_cmp(&rendered[b].aoa_star).then(a.cmp(&b)));

        let mut rewards = vec![0.0; rendered.len()];
        for &i in &order {
            let scored = scene.query(&rendered[i])?;
            if scored.success {
                trace.push(scored.reward);
                return scene.finish(cfg, texts, &values[i], scored, trace);
            }
            rewards[i] = scored.reward;
            if best.as_ref().map_or(true, |(_, b)| scored.reward > b.reward) {
                best = Some((values[i].clone(), scored));
            }
        }
        trace.push(rewards.iter().sum::<f64>() / rewards.len() as f64);
        let batch: Vec<_> = seqs.into_iter().zip(rewards).collect();
        reinforce_step(&mut params, &mut opt, &scene.space, &batch, cfg.baseline)?;
    }
    failure(scene, cfg, texts, best, trace)
}

fn failure(
    scene: &Scene<'_>,
    cfg: &AttackConfig,
    texts: Vec<String>,
    best: Option<(Vec<i64>, Scored)>,
    trace: Vec<f64>,
) -> Result<AttackResult, OrchestratorError> {
    match best {
        Some((values, scored)) => scene.finish(cfg, texts, &values, scored, trace),
        None => {
            let values = scene.space.decode(&vec![0; scene.space.len()]);
            let cand = scene.render(&values)?;
            Ok(AttackResult {
                success: false,
                clip: None,
                placements: cand.placements,
                texts,
                queries: scene.queries(),
                oracle_calls: scene.queries() + 1,
                r_attack: f64::NAN,
                r_iou: cand.r_iou,
                aoa: aoa(&cand.regions),
                aoa_star: cand.aoa_star,
                reward_trace: trace,
                strategy: cfg.strategy,
            })
        }
    }
}

fn attack_search(
    scene: &Scene<'_>,
    cfg: &AttackConfig,
    texts: Vec<String>,
    rng: &mut ChaCha8Rng,
) -> Result<AttackResult, OrchestratorError> {
    let mut rewards = Vec::new();
    let mut best: Option<(Vec<i64>, Scored)> = None;
    let mut obj = Objective::new(cfg.budget(), |values: &[i64]| {
        let scored = scene.query(&scene.render(values)?)?;
        rewards.push(scored.reward);
        if scored.success || best.as_ref().map_or(true, |(_, b)| scored.reward > b.reward) {
            best = Some((values.to_vec(), scored));
        }
        Ok::<_, OrchestratorError>(Evaluation {
            reward: scored.reward,
            success: scored.success,
        })
    });
    match cfg.strategy {
        Strategy::Bh => basin_hopping(&mut obj, &scene.space, &BhConfig::default_for(&scene.space), rng)?,
        _ => random_search(&mut obj, &scene.space, rng)?,
    };
    drop(obj);
    failure(scene, cfg, texts, best, block_means(&rewards, cfg.batch))
}

/// Independent re-check of a reported success.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verification {
    /// The re-rendered clip equals the stored adversarial clip.
    pub clip_matches: bool,
    /// The oracle's argmax on the re-rendered clip differs from the label.
    pub misclassified: bool,
    /// No two frame-0 boxes share a pixel.
    pub boxes_disjoint: bool,
    /// No pixel of any frame is covered by two BSC masks.
    pub masks_disjoint: bool,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.clip_matches && self.misclassified && self.boxes_disjoint && self.masks_disjoint
    }
}

/// Rebuild a result from its placements and texts and re-query the oracle.
pub fn verify_result(
    clean: &VideoClip,
    label: usize,
    oracle: &OracleHandle,
    cfg: &AttackConfig,
    result: &AttackResult,
) -> Result<Verification, OrchestratorError> {
    let atlas = FontAtlas::by_name(&cfg.font)?;
    let glyphs = result
        .texts
        .iter()
        .map(|t| rasterize(t, &atlas, cfg.font_size))
        .collect::<Result<Vec<_>, _>>()?;
    let [t, h, w, c] = clean.dims();
    let regions = regions_for(&result.placements, &glyphs, t, h, w)?;
    let alphas: Vec<u8> = result.placements.iter().map(|p| p.alpha).collect();
    let adversarial = blend(clean, &regions, &vec![cfg.color; c], &alphas)?;

    let boxes = regions.boxes();
    let boxes_disjoint = (0..boxes.len()).all(|i| (i + 1..boxes.len()).all(|j| !boxes[i].intersects(&boxes[j])));
    let mut cover = vec![0u8; t * h * w];
    for (p, g) in result.placements.iter().zip(&glyphs) {
        let single = regions_for(std::slice::from_ref(p), std::slice::from_ref(g), t, h, w)?;
        for f in 0..t {
            for (i, on) in single.frame_mask(f).into_iter().enumerate() {
                cover[f * h * w + i] += on as u8;
            }
        }
    }
    let pred = oracle
        .predict(&adversarial)
        .map_err(|source| OrchestratorError::Oracle { queries: 0, source })?;
    Ok(Verification {
        clip_matches: result.clip.as_ref() == Some(&adversarial),
        misclassified: pred.argmax() != label,
        boxes_disjoint,
        masks_disjoint: cover.iter().all(|&n| n <= 1),
    })
}
