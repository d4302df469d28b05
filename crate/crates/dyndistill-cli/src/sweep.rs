//! Ablation sweeps: one parameter axis crossed with seeds, every cell a full
//! train+eval run. Cells share the dataset and the evaluation episode seed
//! for paired comparison; cell failures are recorded and the sweep carries
//! on.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dyndistill::data::{generate_domains, LabeledDataset, UnlabeledDataset};
use dyndistill::distill::AugmentPairing;
use dyndistill::eval::{cluster_analysis, evaluate_fewshot, mean_ci95, EvalReport};
use dyndistill::{Error, Result};

use crate::config::ExperimentConfig;
use crate::runner::run_training;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    TeacherMomentum,
    Tau,
    Pairing,
    UnlabeledFraction,
    Mode,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::TeacherMomentum => "teacher-momentum",
            SweepAxis::Tau => "tau",
            SweepAxis::Pairing => "pairing",
            SweepAxis::UnlabeledFraction => "unlabeled-fraction",
            SweepAxis::Mode => "mode",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SweepSpec {
    pub name: String,
    pub axis: SweepAxis,
    pub values: Vec<toml::Value>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base: ExperimentConfig,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<SweepSpec> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// The bundled benchmark preset: Transfer versus the distilled model,
    /// 1-shot and 5-shot, over five paired seeds.
    pub fn preset(name: &str) -> Result<SweepSpec> {
        match name {
            "baseline-vs-distill" => Ok(SweepSpec {
                name: "baseline-vs-distill".into(),
                axis: SweepAxis::Mode,
                values: vec!["transfer".into(), "ours".into()],
                seeds: vec![1, 2, 3, 4, 5],
                base: ExperimentConfig::default(),
            }),
            other => Err(Error::config(format!(
                "unknown preset {other:?}; available: baseline-vs-distill"
            ))),
        }
    }
}

/// One (value, seed) cell with its fully resolved configuration.
#[derive(Debug, Clone)]
struct Cell {
    label: String,
    value_label: String,
    seed: u64,
    cfg: ExperimentConfig,
}

fn value_f64(v: &toml::Value) -> Result<f64> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| Error::config(format!("expected a number, got {v}")))
}

fn value_str(v: &toml::Value) -> Result<&str> {
    v.as_str()
        .ok_or_else(|| Error::config(format!("expected a string, got {v}")))
}

/// Apply a mode name to the training flags.
pub fn apply_mode(cfg: &mut ExperimentConfig, mode: &str) -> Result<()> {
    match mode {
        "ours" => {}
        "transfer" => cfg.train.transfer_only = true,
        "no-base" => cfg.train.no_base = true,
        "one-step" => cfg.train.one_step = true,
        "hard-threshold" => cfg.train.hard_threshold = Some(0.95),
        "fixmatch" => {
            cfg.train.hard_threshold = Some(0.95);
            cfg.train.teacher_momentum = 0.0;
        }
        "distill-head" => cfg.train.separate_distill_head = true,
        other => {
            return Err(Error::config(format!(
                "unknown mode {other:?}; expected ours | transfer | no-base | one-step | \
                 hard-threshold | fixmatch | distill-head"
            )))
        }
    }
    Ok(())
}

fn build_cells(spec: &SweepSpec) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    for value in &spec.values {
        let (value_label, apply): (String, Box<dyn Fn(&mut ExperimentConfig) -> Result<()>>) =
            match spec.axis {
                SweepAxis::TeacherMomentum => {
                    let m = value_f64(value)?;
                    (format!("m{m}"), Box::new(move |c| {
                        c.train.teacher_momentum = m;
                        Ok(())
                    }))
                }
                SweepAxis::Tau => {
                    let tau = value_f64(value)?;
                    (format!("tau{tau}"), Box::new(move |c| {
                        c.train.tau = tau;
                        Ok(())
                    }))
                }
                SweepAxis::Pairing => {
                    let pairing = match value_str(value)? {
                        "w-s" => AugmentPairing::WeakStrong,
                        "w-w" => AugmentPairing::WeakWeak,
                        "s-w" => AugmentPairing::StrongWeak,
                        "s-s" => AugmentPairing::StrongStrong,
                        other => {
                            return Err(Error::config(format!("unknown pairing {other:?}")))
                        }
                    };
                    (pairing.label().to_string(), Box::new(move |c| {
                        c.train.augment_pairing = pairing;
                        Ok(())
                    }))
                }
                SweepAxis::UnlabeledFraction => {
                    let f = value_f64(value)?;
                    if spec.base.data.eval_fraction.is_none() {
                        return Err(Error::config(
                            "an unlabeled-fraction sweep needs data.eval_fraction pinned in \
                             the base config so evaluation episodes stay paired across cells",
                        ));
                    }
                    (format!("u{f}"), Box::new(move |c| {
                        c.data.unlabeled_fraction = f;
                        Ok(())
                    }))
                }
                SweepAxis::Mode => {
                    let mode = value_str(value)?.to_string();
                    (mode.clone(), Box::new(move |c| apply_mode(c, &mode)))
                }
            };
        for &seed in &spec.seeds {
            if !seen.insert((value_label.clone(), seed)) {
                log::warn!("duplicate sweep cell ({value_label}, seed {seed}) skipped");
                continue;
            }
            let mut cfg = spec.base.clone();
            apply(&mut cfg)?;
            cfg.train.seed = seed;
            cfg.name = format!("{}-{}-s{}", spec.name, value_label, seed);
            cells.push(Cell {
                label: format!("{value_label}-s{seed}"),
                value_label: value_label.clone(),
                seed,
                cfg,
            });
        }
    }
    Ok(cells)
}

/// One completed cell in the aggregated table.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub value: String,
    pub seed: u64,
    pub reports: Vec<EvalReport>,
    pub v_measure: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepOutcome {
    pub name: String,
    pub axis: String,
    pub config_hash: String,
    pub cells: Vec<CellResult>,
    pub failures: Vec<(String, String)>,
}

type SharedDomains = Arc<(LabeledDataset, UnlabeledDataset, LabeledDataset)>;

/// Run every cell, sharing generated datasets between cells with identical
/// data configs, and write `cells.csv`, `summary.csv`, and `sweep.json`.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path) -> Result<SweepOutcome> {
    spec.base.train.validate()?;
    spec.base.eval.validate()?;
    if spec.values.is_empty() || spec.seeds.is_empty() {
        return Err(Error::config("sweep needs at least one value and one seed"));
    }
    let cells = build_cells(spec)?;
    log::info!(
        "sweep {}: axis {}, {} cells",
        spec.name,
        spec.axis.name(),
        cells.len()
    );

    // generate each distinct dataset once, shared read-only between cells
    let mut domains: HashMap<String, SharedDomains> = HashMap::new();
    for cell in &cells {
        let key = serde_json::to_string(&cell.cfg.data).expect("config serializes");
        if !domains.contains_key(&key) {
            domains.insert(key, Arc::new(generate_domains(&cell.cfg.data)?));
        }
    }

    std::fs::create_dir_all(out_dir)?;
    let results: Vec<(String, Result<CellResult>)> = cells
        .par_iter()
        .map(|cell| {
            let key = serde_json::to_string(&cell.cfg.data).expect("config serializes");
            let data = Arc::clone(&domains[&key]);
            (cell.label.clone(), run_cell(cell, &data, out_dir))
        })
        .collect();

    let mut outcome = SweepOutcome {
        name: spec.name.clone(),
        axis: spec.axis.name().to_string(),
        config_hash: spec.base.hash(),
        cells: Vec::new(),
        failures: Vec::new(),
    };
    for (label, result) in results {
        match result {
            Ok(cell) => outcome.cells.push(cell),
            Err(e) => {
                log::warn!("cell {label} failed: {e}");
                outcome.failures.push((label, e.to_string()));
            }
        }
    }

    write_tables(&outcome, out_dir)?;
    Ok(outcome)
}

fn run_cell(cell: &Cell, data: &SharedDomains, out_dir: &Path) -> Result<CellResult> {
    let (base, unlabeled, eval_set) = (&data.0, &data.1, &data.2);
    let cell_dir = out_dir.join("cells").join(&cell.label);
    std::fs::create_dir_all(&cell_dir)?;
    let artifacts = run_training(&cell.cfg, base, unlabeled, &cell_dir)?;
    let (network, _) = crate::runner::load_network(&artifacts.final_checkpoint, "student")?;
    let reports = evaluate_fewshot(&network.encoder, eval_set, &cell.cfg.eval, &cell.label)?;
    let truth = unlabeled
        .hidden_labels()
        .ok_or_else(|| Error::contract("generated pool lost its hidden labels"))?;
    let cluster = cluster_analysis(
        &network.encoder,
        unlabeled.samples(),
        truth,
        unlabeled.n_hidden_classes(),
        cell.cfg.eval.seed,
    )?;
    for r in &reports {
        log::info!(
            "cell {}: {}-shot {:.2}% +/- {:.2}",
            cell.label,
            r.shot,
            r.mean_accuracy,
            r.ci95
        );
    }
    Ok(CellResult {
        value: cell.value_label.clone(),
        seed: cell.seed,
        reports,
        v_measure: cluster.v_measure,
    })
}

fn write_tables(outcome: &SweepOutcome, out_dir: &Path) -> Result<()> {
    // one row per cell and shot
    let mut cells_csv = String::from("axis,value,seed,way,shot,mean_accuracy,ci95,v_measure\n");
    for cell in &outcome.cells {
        for r in &cell.reports {
            cells_csv.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
                outcome.axis,
                cell.value,
                cell.seed,
                r.way,
                r.shot,
                r.mean_accuracy,
                r.ci95,
                cell.v_measure
            ));
        }
    }
    crate::write_atomic(&out_dir.join("cells.csv"), cells_csv.as_bytes())?;

    // aggregate over seeds per (value, shot)
    let mut grouped: HashMap<(String, usize), Vec<(f64, f64)>> = HashMap::new();
    for cell in &outcome.cells {
        for r in &cell.reports {
            grouped
                .entry((cell.value.clone(), r.shot))
                .or_default()
                .push((r.mean_accuracy, cell.v_measure));
        }
    }
    let mut keys: Vec<_> = grouped.keys().cloned().collect();
    keys.sort();
    let mut summary_csv =
        String::from("axis,value,shot,n_seeds,mean_accuracy,ci95_over_seeds,v_measure_mean\n");
    for key in keys {
        let entries = &grouped[&key];
        let accs: Vec<f64> = entries.iter().map(|e| e.0).collect();
        let (mean, ci) = mean_ci95(&accs);
        let v_mean = entries.iter().map(|e| e.1).sum::<f64>() / entries.len() as f64;
        summary_csv.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6}\n",
            outcome.axis,
            key.0,
            key.1,
            entries.len(),
            mean,
            ci,
            v_mean
        ));
    }
    crate::write_atomic(&out_dir.join("summary.csv"), summary_csv.as_bytes())?;

    let json = serde_json::to_string_pretty(outcome).expect("outcome serializes");
    crate::write_atomic(&out_dir.join("sweep.json"), json.as_bytes())?;
    Ok(())
}

/// Paths written by [`run_sweep`], for the manifest.
pub fn table_paths(out_dir: &Path) -> Vec<PathBuf> {
    vec![
        out_dir.join("cells.csv"),
        out_dir.join("summary.csv"),
        out_dir.join("sweep.json"),
    ]
}
