//! The engines behind the subcommands. `sweep` drives these same functions,
//! so a one-cell sweep and a train+eval command pair produce identical
//! artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use dyndistill::checkpoint::Checkpoint;
use dyndistill::data::{generate_domains, LabeledDataset, UnlabeledDataset};
use dyndistill::distill::{train_base_with, train_joint_with, TrainLog};
use dyndistill::eval::{cluster_analysis, evaluate_fewshot, ClusterReport, EvalReport};
use dyndistill::model::{init_network, Network, StudentTeacherPair};
use dyndistill::{Error, Result};

use crate::config::{file_digest, DatasetKind, ExperimentConfig};

pub struct GeneratedPaths {
    pub base: PathBuf,
    pub unlabeled: PathBuf,
    pub eval: PathBuf,
}

/// Generate the synthetic benchmark and write all three splits.
pub fn run_generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<GeneratedPaths> {
    let (base, unlabeled, eval) = generate_domains(&cfg.data)?;
    let paths = GeneratedPaths {
        base: cfg.dataset_path(DatasetKind::Base, out_dir),
        unlabeled: cfg.dataset_path(DatasetKind::Unlabeled, out_dir),
        eval: cfg.dataset_path(DatasetKind::Eval, out_dir),
    };
    for p in [&paths.base, &paths.unlabeled, &paths.eval] {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
    }
    base.save(&paths.base)?;
    unlabeled.save(&paths.unlabeled)?;
    eval.save(&paths.eval)?;
    log::info!(
        "generated {} base / {} unlabeled / {} eval samples",
        base.len(),
        unlabeled.len(),
        eval.len()
    );
    Ok(paths)
}

pub fn load_base(cfg: &ExperimentConfig, out_dir: &Path) -> Result<LabeledDataset> {
    LabeledDataset::load(&cfg.dataset_path(DatasetKind::Base, out_dir))
}

pub fn load_unlabeled(cfg: &ExperimentConfig, out_dir: &Path) -> Result<UnlabeledDataset> {
    UnlabeledDataset::load(&cfg.dataset_path(DatasetKind::Unlabeled, out_dir))
}

pub struct TrainedArtifacts {
    pub step1_checkpoint: Option<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub latest_checkpoint: PathBuf,
    pub step1_log: Option<PathBuf>,
    pub step2_log: PathBuf,
}

/// The two-step procedure: base pretraining (unless `one_step`), then joint
/// training under the configured mode flags. A `latest.ckpt` is rewritten
/// atomically after every epoch so an interrupted run keeps a valid
/// checkpoint.
pub fn run_training(
    cfg: &ExperimentConfig,
    base: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    out_dir: &Path,
) -> Result<TrainedArtifacts> {
    cfg.train.validate()?;
    if base.dim() != unlabeled.dim() {
        return Err(Error::shape(format!(
            "base dim {} vs unlabeled dim {}",
            base.dim(),
            unlabeled.dim()
        )));
    }
    let ckpt_dir = out_dir.join("checkpoints");
    let log_dir = out_dir.join("logs");
    std::fs::create_dir_all(&ckpt_dir)?;
    std::fs::create_dir_all(&log_dir)?;
    let train_json = serde_json::to_string(&cfg.train).expect("config serializes");
    let latest_path = ckpt_dir.join("latest.ckpt");

    let widths = cfg.model.widths(base.dim());
    let network = init_network(cfg.train.seed, &widths, base.n_classes())?;

    let mut step1_checkpoint = None;
    let mut step1_log = None;
    if cfg.train.one_step {
        log::info!("one-step mode: skipping base pretraining");
    } else {
        log::info!(
            "step 1: {} epochs on {} base samples",
            cfg.train.epochs_step1,
            base.len()
        );
        let mut running = TrainLog::default();
        let log_path = log_dir.join("step1.jsonl");
        train_base_with(&network, base, &cfg.train, |record| {
            log::debug!(
                "step1 epoch {} lr {:.5} loss {:.4}",
                record.epoch,
                record.lr,
                record.total
            );
            running.epochs.push(record.clone());
            running.write_jsonl(&log_path)?;
            Checkpoint::from_network(&network, Some(train_json.clone())).save(&latest_path)
        })?;
        let p = ckpt_dir.join("step1.ckpt");
        Checkpoint::from_network(&network, Some(train_json.clone())).save(&p)?;
        step1_checkpoint = Some(p);
        step1_log = Some(log_path);
    }

    let pair = if cfg.train.separate_distill_head {
        StudentTeacherPair::with_separate_distill_head(
            network,
            cfg.train.teacher_momentum,
            cfg.train.seed,
        )?
    } else {
        StudentTeacherPair::new(network, cfg.train.teacher_momentum)?
    };
    log::info!(
        "step 2: {} epochs, {} unlabeled samples, pairing {}",
        cfg.train.epochs_step2,
        unlabeled.len(),
        cfg.train.augment_pairing.label()
    );
    let step2_log = log_dir.join("step2.jsonl");
    let mut running = TrainLog::default();
    train_joint_with(&pair, base, unlabeled.samples(), &cfg.train, |record| {
        log::debug!(
            "step2 epoch {} lr {:.5} lambda {:.3} total {:.4}",
            record.epoch,
            record.lr,
            record.lambda,
            record.total
        );
        running.epochs.push(record.clone());
        running.write_jsonl(&step2_log)?;
        Checkpoint::from_pair(&pair, Some(train_json.clone())).save(&latest_path)
    })?;

    let final_checkpoint = ckpt_dir.join("final.ckpt");
    Checkpoint::from_pair(&pair, Some(train_json.clone())).save(&final_checkpoint)?;
    Ok(TrainedArtifacts {
        step1_checkpoint,
        final_checkpoint,
        latest_checkpoint: latest_path,
        step1_log,
        step2_log,
    })
}

/// Load the requested network from a checkpoint; `prefix` empty means
/// "student if present, else the bare network".
pub fn load_network(path: &Path, prefix: &str) -> Result<(Network, String)> {
    let ck = Checkpoint::load(path)?;
    let available = ck.network_prefixes();
    let chosen = if prefix.is_empty() {
        available
            .first()
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("{}: no network inside", path.display())))?
    } else {
        prefix.to_string()
    };
    Ok((ck.network(&chosen)?, chosen))
}

/// The JSON document written by `eval`.
#[derive(Debug, Serialize)]
pub struct EvalDocument {
    pub config_hash: String,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub network: String,
    pub reports: Vec<EvalReport>,
}

pub fn run_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    prefix: &str,
    target_eval: &LabeledDataset,
    out_dir: &Path,
) -> Result<(EvalDocument, PathBuf)> {
    let (network, chosen) = load_network(checkpoint, prefix)?;
    if network.encoder.input_dim() != target_eval.dim() {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects input dim {}, dataset has {}",
            network.encoder.input_dim(),
            target_eval.dim()
        )));
    }
    let checkpoint_sha = file_digest(checkpoint)?;
    let encoder_id = format!("{chosen}@{}", &checkpoint_sha[..12]);
    let reports = evaluate_fewshot(&network.encoder, target_eval, &cfg.eval, &encoder_id)?;
    for r in &reports {
        log::info!(
            "{}-way {}-shot: {:.2}% +/- {:.2} over {} episodes",
            r.way,
            r.shot,
            r.mean_accuracy,
            r.ci95,
            r.n_episodes
        );
    }
    let doc = EvalDocument {
        config_hash: cfg.hash(),
        checkpoint: checkpoint.to_path_buf(),
        checkpoint_sha256: checkpoint_sha,
        network: chosen,
        reports,
    };
    let dir = out_dir.join("reports");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("eval.json");
    let json = serde_json::to_string_pretty(&doc).expect("report serializes");
    crate::write_atomic(&path, json.as_bytes())?;

    // flat tabular export for sweep aggregation
    let mut csv = String::from("encoder,way,shot,n_episodes,mean_accuracy,ci95\n");
    for r in &doc.reports {
        csv.push_str(&format!(
            "{},{},{},{},{:.6},{:.6}\n",
            r.encoder_id, r.way, r.shot, r.n_episodes, r.mean_accuracy, r.ci95
        ));
    }
    crate::write_atomic(&dir.join("eval.csv"), csv.as_bytes())?;
    Ok((doc, path))
}

/// The JSON document written by `analyze`.
#[derive(Debug, Serialize)]
pub struct AnalysisDocument {
    pub config_hash: String,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub network: String,
    pub k: usize,
    pub report: ClusterReport,
}

pub fn run_analysis(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    prefix: &str,
    dataset: &UnlabeledDataset,
    k_override: Option<usize>,
    out_dir: &Path,
) -> Result<(AnalysisDocument, PathBuf)> {
    let (network, chosen) = load_network(checkpoint, prefix)?;
    if network.encoder.input_dim() != dataset.dim() {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects input dim {}, dataset has {}",
            network.encoder.input_dim(),
            dataset.dim()
        )));
    }
    let truth = dataset.hidden_labels().ok_or_else(|| {
        Error::contract("dataset carries no ground-truth labels for clustering analysis")
    })?;
    let k = k_override.unwrap_or(dataset.n_hidden_classes());
    let report = cluster_analysis(
        &network.encoder,
        dataset.samples(),
        truth,
        k,
        cfg.eval.seed,
    )?;
    log::info!(
        "v-measure {:.2}% (homogeneity {:.2}%, completeness {:.2}%) at k={k}",
        100.0 * report.v_measure,
        100.0 * report.homogeneity,
        100.0 * report.completeness
    );

    let dir = out_dir.join("analysis");
    std::fs::create_dir_all(&dir)?;

    // feature matrix export for external visualization
    let features =
        dyndistill::eval::extract_feature_set(&network.encoder, dataset.samples())?;
    let export = LabeledDataset::new(
        features,
        truth.to_vec(),
        dataset.n_hidden_classes(),
        None,
    )?;
    let features_path = dir.join("features.dds");
    export.save(&features_path)?;

    let doc = AnalysisDocument {
        config_hash: cfg.hash(),
        checkpoint: checkpoint.to_path_buf(),
        checkpoint_sha256: file_digest(checkpoint)?,
        network: chosen,
        k,
        report,
    };
    let path = dir.join("cluster.json");
    let json = serde_json::to_string_pretty(&doc).expect("report serializes");
    crate::write_atomic(&path, json.as_bytes())?;
    Ok((doc, path))
}
