//! Command-line front end.
//!
//! Machine-readable output (JSON, CSV) goes to stdout; logs and diagnostics go
//! to stderr. Exit codes: 0 success, 1 attack failed, 2 usage or input error,
//! 3 runtime error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::oracle::{subprocess_oracle, toy_classifier, OracleError, OracleHandle, ToyClassifierSpec, DEFAULT_TAU};
use crate::orchestrator::{
    attack, evaluate_dataset, grid_csv, grid_search, list_videos, parse_rows, AttackConfig, GridAxis,
    OrchestratorError, SaliencySource, Strategy, TextSource,
};
use crate::tensor_io::{export_frames, load_video, save_video, TensorError};
use crate::toy::{ToySuite, ToySuiteConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ATTACK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bsc", version, about = "Black-box bullet-screen comment attacks on video classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Attack one video and print its metrics as JSON.
    Attack(AttackArgs),
    /// Attack every clip of a dataset and emit per-video CSV plus aggregate JSON.
    Eval(EvalArgs),
    /// Evaluate a dataset once per value of one hyperparameter.
    Grid(GridArgs),
    /// Write the frames of a clip as PPM/PGM images.
    Export(ExportArgs),
    /// Handshake an oracle and print what it reports.
    ServeCheck(ServeCheckArgs),
    /// Generate the seeded synthetic dataset for the builtin oracle.
    MakeToy(MakeToyArgs),
}

#[derive(Debug, Clone, Args)]
struct OracleFlags {
    /// Oracle backend: builtin, builtin:<seed>, or cmd:<command line> [default: builtin]
    #[arg(long)]
    oracle: Option<String>,
    /// Per-request timeout of a subprocess oracle in seconds [default: 30]
    #[arg(long, value_name = "SECS")]
    oracle_timeout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
struct ConfigFlags {
    /// Number of BSCs [default: 4]
    #[arg(long)]
    m: Option<usize>,
    /// Font size in pixels [default: 9]
    #[arg(long)]
    font_size: Option<usize>,
    /// Weight of the overlap penalty in the reward [default: 0.001]
    #[arg(long)]
    lambda: Option<f64>,
    /// Font atlas: embedded name or path to a .fatl file [default: DejaVuSerif-like]
    #[arg(long)]
    font: Option<String>,
    /// Rollouts per epoch [default: 32]
    #[arg(long)]
    batch: Option<usize>,
    /// Query budget [default: 50000]
    #[arg(long)]
    max_queries: Option<usize>,
    /// Search strategy: rl, bh or random [default: rl]
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Candidate budget of the random and bh baselines [default: max queries]
    #[arg(long)]
    match_queries: Option<usize>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// BSC text; give once for a shared text or m times [default: lol]
    #[arg(long)]
    text: Vec<String>,
    /// Text file, or directory of <video stem>.txt files, one text per line [default: none]
    #[arg(long, conflicts_with = "text")]
    text_file: Option<PathBuf>,
    /// Ask the oracle backend for a caption of the clip [default: false]
    #[arg(long, conflicts_with_all = ["text", "text_file"])]
    caption: bool,
    /// Gray level of the BSC text [default: 255]
    #[arg(long)]
    color: Option<u8>,
    /// Leave-one-out reward baseline in the policy gradient [default: false]
    #[arg(long)]
    baseline: Option<bool>,
    /// Salient masks: sobel, or file:<mask.vten or directory> [default: sobel]
    #[arg(long)]
    saliency: Option<SaliencySource>,
    /// Saliency quantile threshold [default: 0.75]
    #[arg(long)]
    quantile: Option<f64>,
    /// JSON file with configuration fields; explicit flags take precedence [default: none]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// Input clip (.vten)
    #[arg(long)]
    video: PathBuf,
    /// Ground-truth class index
    #[arg(long)]
    label: usize,
    /// Where to write the adversarial clip on success [default: not written]
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleFlags,
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of .vten clips
    #[arg(long)]
    dataset: PathBuf,
    /// Labels CSV (filename,label_index) [default: <dataset>/labels.csv]
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Write per-video CSV here and print the aggregate JSON on stdout [default: CSV on stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep rows already present in --out and attack only the remaining clips [default: false]
    #[arg(long, requires = "out")]
    resume: bool,
    #[command(flatten)]
    oracle: OracleFlags,
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Axis to vary: m, h, lambda or font
    #[arg(long)]
    axis: GridAxis,
    /// Comma-separated axis values
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Directory of .vten clips
    #[arg(long)]
    dataset: PathBuf,
    /// Labels CSV (filename,label_index) [default: <dataset>/labels.csv]
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Write the grid CSV here instead of stdout [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleFlags,
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Clip to export (.vten)
    #[arg(long)]
    video: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeCheckArgs {
    /// Clip dims T,H,W,C to check against (required for builtin) [default: 16,64,64,3]
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[command(flatten)]
    oracle: OracleFlags,
}

#[derive(Debug, Args)]
struct MakeToyArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Suite seed; use the same seed with --oracle builtin:<seed> [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of videos [default: 24]
    #[arg(long)]
    videos: Option<usize>,
    /// Number of classes [default: 8]
    #[arg(long)]
    classes: Option<usize>,
    /// Template contrast in gray levels [default: 11]
    #[arg(long)]
    contrast: Option<f64>,
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        use OrchestratorError::*;
        let code = match &e {
            InvalidConfig(_)
            | CleanMisclassified { .. }
            | DimensionMismatch { .. }
            | LabelOutOfRange { .. }
            | EmptyDataset(_)
            | Labels { .. }
            | MissingLabel(_)
            | Io { .. }
            | Tensor(_)
            | Overlay(_)
            | Saliency(_)
            | Reward(_) => EXIT_USAGE,
            Oracle { .. } | Agent(_) => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        Self::usage(e.to_string())
    }
}

fn oracle_error(e: OracleError) -> CliError {
    match e {
        OracleError::InvalidSpec(_) => CliError::usage(e.to_string()),
        _ => CliError::runtime(e.to_string()),
    }
}

fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| if text.ends_with('\n') { Ok(()) } else { out.write_all(b"\n") })
        .and_then(|_| out.flush())
        .map_err(|e| CliError::runtime(format!("writing stdout: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

fn build_config(flags: &ConfigFlags) -> Result<AttackConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("reading {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?
        }
        None => AttackConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = flags.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(m, font_size, lambda, font, batch, max_queries, strategy, seed, color, baseline, saliency, quantile);
    if flags.match_queries.is_some() {
        cfg.match_queries = flags.match_queries;
    }
    if !flags.text.is_empty() {
        cfg.text = TextSource::Literal(flags.text.clone());
    } else if let Some(path) = &flags.text_file {
        cfg.text = TextSource::File(path.clone());
    } else if flags.caption {
        cfg.text = TextSource::Caption;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_oracle(flags: &OracleFlags, dims: [usize; 4]) -> Result<OracleHandle, CliError> {
    let spec = flags.oracle.as_deref().unwrap_or("builtin");
    let timeout = flags.oracle_timeout.unwrap_or(30.0);
    if !(timeout.is_finite() && timeout > 0.0) {
        return Err(CliError::usage(format!("oracle timeout must be positive, got {timeout}")));
    }
    if let Some(cmd) = spec.strip_prefix("cmd:") {
        return subprocess_oracle(cmd, Some(dims), Duration::from_secs_f64(timeout)).map_err(oracle_error);
    }
    let seed = match spec {
        "builtin" => 0,
        _ => spec
            .strip_prefix("builtin:")
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| CliError::usage(format!("unknown oracle {spec:?} (expected builtin, builtin:<seed> or cmd:<command>)")))?,
    };
    let [t, h, w, c] = dims;
    let classes = ToySuiteConfig::default().classes;
    let spec = ToyClassifierSpec::seeded(classes, h, w, DEFAULT_TAU, seed).map_err(oracle_error)?;
    Ok(toy_classifier(spec, t, c))
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn cmd_attack(args: AttackArgs) -> Result<i32, CliError> {
    let cfg = build_config(&args.cfg)?;
    let clip = load_video(&args.video)?;
    let cfg = cfg.for_video(&args.video)?;
    let oracle = open_oracle(&args.oracle, clip.dims())?;
    let result = with_threads(args.cfg.threads, || attack(&clip, args.label, &oracle, &cfg))??;
    if let (Some(path), Some(adv)) = (&args.out, &result.clip) {
        save_video(adv, path).map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let mut metrics = result.metrics_json();
    metrics["video"] = json!(args.video.display().to_string());
    metrics["label"] = json!(args.label);
    metrics["seed"] = json!(cfg.seed);
    emit(&metrics.to_string())?;
    Ok(if result.success { EXIT_OK } else { EXIT_ATTACK_FAILED })
}

fn dataset_dims(dir: &Path) -> Result<[usize; 4], CliError> {
    let videos = list_videos(dir)?;
    let first = videos
        .first()
        .ok_or_else(|| CliError::from(OrchestratorError::EmptyDataset(dir.to_path_buf())))?;
    Ok(load_video(first)?.dims())
}

fn cmd_eval(args: EvalArgs) -> Result<i32, CliError> {
    let cfg = build_config(&args.cfg)?;
    let oracle = open_oracle(&args.oracle, dataset_dims(&args.dataset)?)?;
    let previous = match (&args.out, args.resume) {
        (Some(path), true) if path.exists() => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("reading {}: {e}", path.display())))?;
            parse_rows(&text).map_err(|e| CliError::usage(format!("resume file {}: {e}", path.display())))?
        }
        _ => Vec::new(),
    };
    if !previous.is_empty() {
        log::info!("resuming with {} finished videos", previous.len());
    }
    let report = with_threads(args.cfg.threads, || {
        evaluate_dataset(&args.dataset, args.labels.as_deref(), &oracle, &cfg, &previous)
    })??;
    let summary = report.summary_json(&cfg).to_string();
    match &args.out {
        Some(path) => {
            write_file(path, &report.to_csv())?;
            emit(&summary)?;
        }
        None => {
            emit(&report.to_csv())?;
            eprintln!("{summary}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_grid(args: GridArgs) -> Result<i32, CliError> {
    let cfg = build_config(&args.cfg)?;
    let oracle = open_oracle(&args.oracle, dataset_dims(&args.dataset)?)?;
    let rows = with_threads(args.cfg.threads, || {
        grid_search(&cfg, args.axis, &args.values, &args.dataset, args.labels.as_deref(), &oracle)
    })??;
    let csv = grid_csv(args.axis, &rows);
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => emit(&csv)?,
    }
    Ok(EXIT_OK)
}

fn cmd_export(args: ExportArgs) -> Result<i32, CliError> {
    let clip = load_video(&args.video)?;
    let paths = export_frames(&clip, &args.out).map_err(|e| CliError::runtime(e.to_string()))?;
    emit(&json!({"frames": paths.len(), "dir": args.out.display().to_string()}).to_string())?;
    Ok(EXIT_OK)
}

fn cmd_serve_check(args: ServeCheckArgs) -> Result<i32, CliError> {
    let dims = match args.dims.as_deref() {
        None => [16, 64, 64, 3],
        Some(&[t, h, w, c]) => [t, h, w, c],
        Some(other) => return Err(CliError::usage(format!("--dims needs 4 values, got {}", other.len()))),
    };
    let oracle = open_oracle(&args.oracle, dims)?;
    emit(
        &json!({
            "backend": format!("{:?}", oracle.kind()).to_lowercase(),
            "K": oracle.num_classes(),
            "dims": oracle.dims(),
        })
        .to_string(),
    )?;
    Ok(EXIT_OK)
}

fn cmd_make_toy(args: MakeToyArgs) -> Result<i32, CliError> {
    let defaults = ToySuiteConfig::default();
    let config = ToySuiteConfig {
        seed: args.seed.unwrap_or(defaults.seed),
        videos: args.videos.unwrap_or(defaults.videos),
        classes: args.classes.unwrap_or(defaults.classes),
        contrast: args.contrast.unwrap_or(defaults.contrast),
        ..defaults
    };
    let suite = ToySuite::generate(config).map_err(oracle_error)?;
    let paths = suite
        .write_dataset(&args.out)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    emit(
        &json!({
            "videos": paths.len(),
            "dir": args.out.display().to_string(),
            "seed": suite.config.seed,
            "oracle": format!("builtin:{}", suite.config.seed),
        })
        .to_string(),
    )?;
    Ok(EXIT_OK)
}

/// Run the CLI on `argv` (including the program name) and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Attack(a) => cmd_attack(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Export(a) => cmd_export(a),
        Command::ServeCheck(a) => cmd_serve_check(a),
        Command::MakeToy(a) => cmd_make_toy(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
