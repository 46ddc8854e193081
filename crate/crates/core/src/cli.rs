//! The `openaff` command-line tool.
//!
//! Machine-readable results go to standard output as JSON; progress goes to
//! standard error. Exit codes: 0 success, 2 usage error, 3 data error,
//! 4 numeric error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, load_manifest, load_points, synthetic_embeddings, Dataset, EmbeddingPlan, SyntheticSpec,
    DEFAULT_PAIR_COSINE,
};
use crate::error::Error;
use crate::eval::{run_protocol, ProtocolMode, ProtocolOptions};
use crate::geometry::prepare_cloud;
use crate::head::{detect, EmbeddingTable, TemperatureMode};
use crate::ply::write_ply;
use crate::trainer::{load_checkpoint, save_checkpoint, train, write_log, TrainConfig};

pub const THREADS_ENV: &str = "OPENAFF_THREADS";
pub const LOG_ENV: &str = "OPENAFF_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "openaff",
    version,
    about = "Open-vocabulary affordance detection on point clouds"
)]
pub struct Cli {
    /// Worker threads; 1 forces the single-threaded path.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a JSONL training log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split; prints a metrics report.
    Eval(EvalArgs),
    /// Label every point of a cloud; writes a colored PLY, prints assignments.
    Detect(DetectArgs),
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Generate synthetic label embeddings as an OADE file.
    EmbedSynth(EmbedSynthArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-size defaults: 200 epochs, 2048 points, D = 512.
    #[default]
    Full,
    /// CPU-sized run: 30 epochs, 512 points, D = 64.
    Desk,
}

impl Preset {
    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Full => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(0),
        }
    }
}

/// Contents of a `--config` file. `train` holds [`TrainConfig`] fields
/// applied on top of the preset. Relative paths resolve against the
/// working directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub mode: Option<ProtocolMode>,
    pub split: Option<String>,
    pub train: serde_json::Map<String, Value>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Preset defaults overlaid with the `train` section.
    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let mut base = serde_json::to_value(self.preset.train_config())?;
        let obj = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in &self.train {
            obj.insert(k.clone(), v.clone());
        }
        serde_json::from_value(base).map_err(|e| CliError::Usage(format!("config `train` section: {e}")))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// OADE embeddings for (at least) the training labels.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory for `model.oadc` and `train_log.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, value_enum)]
    pub temperature: Option<TemperatureArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TemperatureArg {
    LogScale,
    TemperatureLiteral,
}

impl From<TemperatureArg> for TemperatureMode {
    fn from(t: TemperatureArg) -> Self {
        match t {
            TemperatureArg::LogScale => TemperatureMode::LogScale,
            TemperatureArg::TemperatureLiteral => TemperatureMode::TemperatureLiteral,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// `closed` (training labels only) or `open` (full vocabulary).
    #[arg(long)]
    pub mode: Option<ProtocolMode>,
    /// Split to score (default `test`).
    #[arg(long)]
    pub split: Option<String>,
    /// Points per shape (default: the checkpoint's training value).
    #[arg(long)]
    pub points: Option<usize>,
    /// Resampling seed (default: the checkpoint's seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Point file with `x y z` (optionally a fourth label column) per line.
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Comma-separated query labels, in order; default: every embedding.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// PLY output path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthPreset {
    Desk,
    ZeroShot,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic dataset spec; overrides `--preset`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: SynthPreset,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlanArg {
    Orthonormal,
    Paired,
}

#[derive(Debug, Args)]
pub struct EmbedSynthArgs {
    /// Comma-separated labels.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["labels_file", "manifest"])]
    pub labels: Option<Vec<String>>,
    /// File with one label per line.
    #[arg(long, conflicts_with = "manifest")]
    pub labels_file: Option<PathBuf>,
    /// Take the label list of a dataset manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "orthonormal")]
    pub plan: PlanArg,
    /// `anchor:partner` pair for the paired plan; repeatable.
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_PAIR_COSINE)]
    pub cosine: f64,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Run(Error::Config(_)) => 2,
            CliError::Run(e) if e.is_numeric() => 4,
            CliError::Run(_) => 3,
        }
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required `{flag}`")))
}

fn print_json(value: &impl Serialize) -> Result<(), CliError> {
    print_text(&serde_json::to_string_pretty(value)?)
}

fn print_text(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e).into()),
        _ => Ok(()),
    }
}

fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let file = args
        .config
        .as_deref()
        .map(RunConfig::load)
        .transpose()?
        .unwrap_or_default();
    let file = RunConfig {
        preset: args.preset.unwrap_or(file.preset),
        ..file
    };
    let mut config = file.train_config()?;
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.weight_decay {
        config.weight_decay = v;
    }
    if let Some(v) = args.points {
        config.points = v;
    }
    if let Some(v) = args.eval_every {
        config.eval_every = v;
    }
    if let Some(v) = args.temperature {
        config.temperature = v.into();
    }
    let manifest = required(args.manifest.or(file.manifest), "--manifest")?;
    let embeddings = required(args.embeddings.or(file.embeddings), "--embeddings")?;
    let out = required(args.out.or(file.out_dir), "--out")?;

    let dataset = Dataset::load(&manifest)?;
    let table = EmbeddingTable::read_oade(&embeddings)?;
    // A table covering the full vocabulary is narrowed to the seen labels.
    let table = if table.len() > dataset.manifest.seen_labels.len() {
        table.subset(&dataset.manifest.seen_labels)?
    } else {
        table
    };
    log::info!(
        "training on {} shapes, {} labels, {} epochs",
        dataset.split("train").len(),
        table.len(),
        config.epochs
    );
    let outcome = train(&config, &dataset, &table)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ckpt = out.join("model.oadc");
    let log_path = out.join("train_log.jsonl");
    save_checkpoint(&ckpt, &outcome.checkpoint)?;
    write_log(&log_path, &outcome.log)?;
    print_json(&json!({
        "checkpoint": ckpt,
        "log": log_path,
        "epochs": config.epochs,
        "first_loss": outcome.log.first().map(|r| r.mean_loss),
        "final_loss": outcome.log.last().map(|r| r.mean_loss),
        "checkpoint_sha256": file_sha256(&ckpt)?,
    }))
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let file = args
        .config
        .as_deref()
        .map(RunConfig::load)
        .transpose()?
        .unwrap_or_default();
    let checkpoint = required(args.checkpoint.or(file.checkpoint), "--checkpoint")?;
    let manifest = required(args.manifest.or(file.manifest), "--manifest")?;
    let embeddings = required(args.embeddings.or(file.embeddings), "--embeddings")?;
    let mode = required(args.mode.or(file.mode), "--mode")?;
    let checkpoint = load_checkpoint(&checkpoint)?;
    let dataset = Dataset::load(&manifest)?;
    let table = EmbeddingTable::read_oade(&embeddings)?;
    let options = ProtocolOptions {
        mode,
        split: args.split.or(file.split).unwrap_or_else(|| "test".into()),
        points: args.points.unwrap_or(checkpoint.config.points),
        seed: args.seed.unwrap_or(checkpoint.config.seed),
    };
    let report = run_protocol(&checkpoint.model, &dataset, &table, &options)?;
    print_json(&report)
}

fn run_detect(args: DetectArgs) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let table = EmbeddingTable::read_oade(&args.embeddings)?;
    let table = match &args.labels {
        Some(labels) => table.subset(labels)?,
        None => table,
    };
    let cloud = load_points(&args.cloud)?;
    let points = args.points.unwrap_or(checkpoint.config.points);
    let (prepared, source) = prepare_cloud(&cloud, points, args.seed)?;
    let map = detect(&checkpoint.model, &prepared, &table)?;
    let original: Vec<_> = source.iter().map(|&i| cloud.points()[i]).collect();
    write_ply(&args.out, &original, &map.assignment, table.labels())?;
    // Compact: one long line rather than one line per point.
    print_text(&serde_json::to_string(&json!({
        "labels": table.labels(),
        "assignment": map.assignment,
        "max_score": map.max_scores(),
        "source_index": source,
    }))?)
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => match args.preset {
            SynthPreset::Desk => SyntheticSpec::desk(0),
            SynthPreset::ZeroShot => SyntheticSpec::zero_shot(0),
        },
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let manifest = generate_synthetic(&spec, &args.out)?;
    let loaded = load_manifest(&manifest)?;
    print_json(&json!({
        "manifest": manifest,
        "labels": loaded.labels,
        "seen_labels": loaded.seen_labels,
        "shapes": loaded.splits.iter().map(|(k, v)| (k.clone(), v.len())).collect::<std::collections::BTreeMap<_, _>>(),
    }))
}

fn run_embed_synth(args: EmbedSynthArgs) -> Result<(), CliError> {
    let labels: Vec<String> = if let Some(labels) = args.labels {
        labels.into_iter().map(|l| l.trim().to_string()).collect()
    } else if let Some(path) = &args.labels_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    } else if let Some(path) = &args.manifest {
        load_manifest(path)?.labels
    } else {
        return Err(CliError::Usage(
            "one of `--labels`, `--labels-file` or `--manifest` is required".into(),
        ));
    };
    let plan = match args.plan {
        PlanArg::Orthonormal => {
            if !args.pairs.is_empty() {
                return Err(CliError::Usage("`--pair` only applies to `--plan paired`".into()));
            }
            EmbeddingPlan::Orthonormal
        }
        PlanArg::Paired => {
            let pairs = args
                .pairs
                .iter()
                .map(|p| match p.split_once(':') {
                    Some((a, b)) => Ok((a.trim().to_string(), b.trim().to_string())),
                    None => Err(CliError::Usage(format!("pair `{p}` must look like anchor:partner"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if pairs.is_empty() {
                return Err(CliError::Usage("`--plan paired` needs at least one `--pair`".into()));
            }
            EmbeddingPlan::Paired {
                pairs,
                cosine: args.cosine,
            }
        }
    };
    let table = synthetic_embeddings(&labels, args.dim, args.seed, &plan)?;
    table.write_oade(&args.out)?;
    print_json(&json!({
        "out": args.out,
        "labels": table.labels(),
        "dim": table.dim(),
        "sha256": table.fingerprint(),
    }))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("`--threads` must be positive".into()));
        }
        // Fails only if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Detect(a) => run_detect(a),
        Command::Synth(a) => run_synth(a),
        Command::EmbedSynth(a) => run_embed_synth(a),
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}
