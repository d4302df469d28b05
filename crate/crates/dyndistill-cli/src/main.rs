//! Command-line entry point: generate, train, eval, analyze, sweep.
//!
//! Exit codes: 0 success, 1 sweep completed with failed cells, 2 config
//! error, 3 file error (I/O, parse, checkpoint), 4 contract violation.

mod config;
mod manifest;
mod runner;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dyndistill::data::UnlabeledDataset;
use dyndistill::distill::AugmentPairing;
use dyndistill::{Error, Result};

use config::{DatasetKind, ExperimentConfig};
use manifest::ManifestBuilder;

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Parser)]
#[command(
    name = "dyndistill",
    version,
    about = "Cross-domain few-shot experiments: consistency distillation \
             against an EMA teacher on synthetic benchmarks"
)]
struct Cli {
    /// TOML experiment config; CLI flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override (applies to data, training, and evaluation)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: runs/<name>)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps and parallel episode evaluation
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// quiet | info | debug
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cross-domain benchmark files
    Generate(GenerateArgs),
    /// Two-step training: base pretraining, then joint distillation
    Train(TrainArgs),
    /// Episodic few-shot evaluation of a checkpoint
    Eval(EvalArgs),
    /// K-means + V-measure clustering analysis and feature export
    Analyze(AnalyzeArgs),
    /// Run a parameter-axis sweep of full train+eval cells
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n_base_classes: Option<usize>,
    #[arg(long)]
    n_target_classes: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    cluster_std: Option<f64>,
    #[arg(long)]
    warp_severity: Option<f64>,
    #[arg(long)]
    warp_gain: Option<f64>,
    #[arg(long)]
    unlabeled_fraction: Option<f64>,
    #[arg(long)]
    eval_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled base dataset (default: <out>/data/base.dds)
    #[arg(long)]
    base: Option<PathBuf>,
    /// Unlabeled target dataset (default: <out>/data/target_unlabeled.dds)
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs_step1: Option<usize>,
    #[arg(long)]
    epochs_step2: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    teacher_momentum: Option<f64>,
    #[arg(long)]
    lambda_ramp_epochs: Option<usize>,
    /// w-s | w-w | s-w | s-s
    #[arg(long)]
    pairing: Option<String>,
    /// Supervised-only joint phase (the Transfer baseline)
    #[arg(long)]
    transfer_only: bool,
    /// Drop the supervised term in step 2
    #[arg(long)]
    no_base: bool,
    /// Skip step-1 pretraining
    #[arg(long)]
    one_step: bool,
    /// Hard pseudo-label confidence cutoff (FixMatch style)
    #[arg(long)]
    hard_threshold: Option<f64>,
    /// Use a separate random projection for the distillation loss
    #[arg(long)]
    separate_distill_head: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled evaluation dataset (default: <out>/data/target_eval.dds)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Which network inside the checkpoint: student | teacher
    #[arg(long, default_value = "")]
    network: String,
    #[arg(long)]
    way: Option<usize>,
    /// Shot counts, e.g. --shots 1 --shots 5
    #[arg(long)]
    shots: Vec<usize>,
    #[arg(long)]
    queries_per_class: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    normalize_features: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset with (hidden) labels (default: <out>/data/target_unlabeled.dds)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Cluster count (default: the dataset's class count)
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value = "")]
    network: String,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec TOML (name, axis, values, seeds, [base])
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// Bundled sweep: baseline-vs-distill
    #[arg(long)]
    preset: Option<String>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Parse { .. } | Error::Checkpoint(_) => 3,
        Error::Contract(_) | Error::Shape(_) | Error::Episode(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.log_level.as_str() {
        "quiet" => log::LevelFilter::Warn,
        "debug" => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
    if let Some(jobs) = cli.jobs {
        // ignore the error if a pool already exists (repeated in-process runs)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.override_seed(cli.seed);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Generate(args) => {
            let mut cfg = load_config(&cli)?;
            apply_generate_overrides(&mut cfg, args);
            let out_dir = cfg.resolve_out_dir(cli.out.as_deref());
            std::fs::create_dir_all(&out_dir)?;
            let mut manifest = ManifestBuilder::start("generate");
            let paths = runner::run_generate(&cfg, &out_dir)?;
            for p in [&paths.base, &paths.unlabeled, &paths.eval] {
                manifest.add_output(p)?;
            }
            let mpath = manifest.write(&cfg, &out_dir)?;
            log::info!("manifest: {}", mpath.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => {
            let mut cfg = load_config(&cli)?;
            apply_train_overrides(&mut cfg, args)?;
            let out_dir = cfg.resolve_out_dir(cli.out.as_deref());
            std::fs::create_dir_all(&out_dir)?;
            let base = runner::load_base(&cfg, &out_dir)?;
            let unlabeled = runner::load_unlabeled(&cfg, &out_dir)?;
            let mut manifest = ManifestBuilder::start("train");
            let artifacts = runner::run_training(&cfg, &base, &unlabeled, &out_dir)?;
            if let Some(p) = &artifacts.step1_checkpoint {
                manifest.add_output(p)?;
            }
            if let Some(p) = &artifacts.step1_log {
                manifest.add_output(p)?;
            }
            manifest.add_output(&artifacts.final_checkpoint)?;
            manifest.add_output(&artifacts.latest_checkpoint)?;
            manifest.add_output(&artifacts.step2_log)?;
            let mpath = manifest.write(&cfg, &out_dir)?;
            log::info!(
                "final checkpoint: {}",
                artifacts.final_checkpoint.display()
            );
            log::info!("manifest: {}", mpath.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(args) => {
            let mut cfg = load_config(&cli)?;
            apply_eval_overrides(&mut cfg, args);
            let out_dir = cfg.resolve_out_dir(cli.out.as_deref());
            std::fs::create_dir_all(&out_dir)?;
            let dataset_path = args
                .dataset
                .clone()
                .unwrap_or_else(|| cfg.dataset_path(DatasetKind::Eval, &out_dir));
            let target_eval = dyndistill::data::LabeledDataset::load(&dataset_path)?;
            let mut manifest = ManifestBuilder::start("eval");
            let (_, report_path) =
                runner::run_eval(&cfg, &args.checkpoint, &args.network, &target_eval, &out_dir)?;
            manifest.add_output(&report_path)?;
            manifest.add_output(&out_dir.join("reports").join("eval.csv"))?;
            let mpath = manifest.write(&cfg, &out_dir)?;
            log::info!("report: {}", report_path.display());
            log::info!("manifest: {}", mpath.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze(args) => {
            let mut cfg = load_config(&cli)?;
            let out_dir = cfg.resolve_out_dir(cli.out.as_deref());
            std::fs::create_dir_all(&out_dir)?;
            cfg.override_seed(cli.seed);
            let dataset_path = args
                .dataset
                .clone()
                .unwrap_or_else(|| cfg.dataset_path(DatasetKind::Unlabeled, &out_dir));
            let dataset = UnlabeledDataset::load(&dataset_path)?;
            let mut manifest = ManifestBuilder::start("analyze");
            let (_, report_path) = runner::run_analysis(
                &cfg,
                &args.checkpoint,
                &args.network,
                &dataset,
                args.k,
                &out_dir,
            )?;
            manifest.add_output(&report_path)?;
            manifest.add_output(&out_dir.join("analysis").join("features.dds"))?;
            let mpath = manifest.write(&cfg, &out_dir)?;
            log::info!("report: {}", report_path.display());
            log::info!("manifest: {}", mpath.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(args) => {
            let mut spec = match (&args.spec, &args.preset) {
                (Some(path), None) => {
                    if cli.config.is_some() {
                        return Err(Error::config(
                            "--config conflicts with --spec; put the base config in the \
                             spec's [base] table",
                        ));
                    }
                    sweep::SweepSpec::load(path)?
                }
                (None, Some(name)) => {
                    let mut spec = sweep::SweepSpec::preset(name)?;
                    if let Some(path) = &cli.config {
                        spec.base = ExperimentConfig::load(path)?;
                    }
                    spec
                }
                _ => {
                    return Err(Error::config(
                        "sweep needs exactly one of --spec or --preset",
                    ))
                }
            };
            spec.base.override_seed(cli.seed);
            let out_dir = cli
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(&spec.name));
            std::fs::create_dir_all(&out_dir)?;
            let mut manifest = ManifestBuilder::start("sweep");
            let outcome = sweep::run_sweep(&spec, &out_dir)?;
            for p in sweep::table_paths(&out_dir) {
                manifest.add_output(&p)?;
            }
            let mpath = manifest.write(&spec.base, &out_dir)?;
            log::info!("tables: {}", out_dir.display());
            log::info!("manifest: {}", mpath.display());
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                log::error!("{} sweep cell(s) failed", outcome.failures.len());
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn apply_generate_overrides(cfg: &mut ExperimentConfig, args: &GenerateArgs) {
    let d = &mut cfg.data;
    if let Some(v) = args.n_base_classes {
        d.n_base_classes = v;
    }
    if let Some(v) = args.n_target_classes {
        d.n_target_classes = v;
    }
    if let Some(v) = args.samples_per_class {
        d.samples_per_class = v;
    }
    if let Some(v) = args.input_dim {
        d.input_dim = v;
    }
    if let Some(v) = args.latent_dim {
        d.latent_dim = v;
    }
    if let Some(v) = args.cluster_std {
        d.cluster_std = v;
    }
    if let Some(v) = args.warp_severity {
        d.warp.severity = v;
    }
    if let Some(v) = args.warp_gain {
        d.warp.gain = v;
    }
    if let Some(v) = args.unlabeled_fraction {
        d.unlabeled_fraction = v;
    }
    if let Some(v) = args.eval_fraction {
        d.eval_fraction = Some(v);
    }
}

fn apply_train_overrides(cfg: &mut ExperimentConfig, args: &TrainArgs) -> Result<()> {
    if args.base.is_some() {
        cfg.datasets.base = args.base.clone();
    }
    if args.unlabeled.is_some() {
        cfg.datasets.unlabeled = args.unlabeled.clone();
    }
    let t = &mut cfg.train;
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.epochs_step1 {
        t.epochs_step1 = v;
    }
    if let Some(v) = args.epochs_step2 {
        t.epochs_step2 = v;
    }
    if let Some(v) = args.tau {
        t.tau = v;
    }
    if let Some(v) = args.teacher_momentum {
        t.teacher_momentum = v;
    }
    if let Some(v) = args.lambda_ramp_epochs {
        t.lambda_ramp_epochs = Some(v);
    }
    if let Some(p) = &args.pairing {
        t.augment_pairing = match p.as_str() {
            "w-s" => AugmentPairing::WeakStrong,
            "w-w" => AugmentPairing::WeakWeak,
            "s-w" => AugmentPairing::StrongWeak,
            "s-s" => AugmentPairing::StrongStrong,
            other => return Err(Error::config(format!("unknown pairing {other:?}"))),
        };
    }
    if args.transfer_only {
        t.transfer_only = true;
    }
    if args.no_base {
        t.no_base = true;
    }
    if args.one_step {
        t.one_step = true;
    }
    if let Some(v) = args.hard_threshold {
        t.hard_threshold = Some(v);
    }
    if args.separate_distill_head {
        t.separate_distill_head = true;
    }
    Ok(())
}

fn apply_eval_overrides(cfg: &mut ExperimentConfig, args: &EvalArgs) {
    let e = &mut cfg.eval;
    if let Some(v) = args.way {
        e.way = v;
    }
    if !args.shots.is_empty() {
        e.shots = args.shots.clone();
    }
    if let Some(v) = args.queries_per_class {
        e.queries_per_class = v;
    }
    if let Some(v) = args.episodes {
        e.n_episodes = v;
    }
    if args.normalize_features {
        e.normalize_features = true;
    }
}
