//! Synthetic cross-domain benchmark generation.
//!
//! Per-class Gaussian clusters in a latent space are embedded into the input
//! space by a seeded orthonormal map. Target-domain samples additionally pass
//! through a fixed nonlinear warp (per-coordinate tanh squashing followed by
//! an orthogonal rotation, blended by a severity knob), creating a
//! controllable domain gap. The target pool is split per class into a small
//! unlabeled set and an evaluation set.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, SampleSet, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::seeding::{rng_for, stream};

/// Warp applied to target-domain samples only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    /// 0 disables the warp (no domain shift); 1 applies it fully.
    pub severity: f64,
    /// Scale of the per-coordinate gains inside the tanh squashing.
    pub gain: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig {
            severity: 1.0,
            gain: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainGenConfig {
    pub n_base_classes: usize,
    pub n_target_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub cluster_std: f64,
    pub warp: WarpConfig,
    /// Fraction of each target class routed to the unlabeled pool.
    pub unlabeled_fraction: f64,
    /// Fraction of each target class reserved for evaluation. Defaults to
    /// the complement of `unlabeled_fraction`; pin it explicitly to keep the
    /// evaluation split fixed while sweeping the unlabeled amount.
    pub eval_fraction: Option<f64>,
    pub seed: u64,
}

impl Default for DomainGenConfig {
    fn default() -> Self {
        DomainGenConfig {
            n_base_classes: 10,
            n_target_classes: 8,
            samples_per_class: 100,
            input_dim: 32,
            latent_dim: 8,
            cluster_std: 0.7,
            warp: WarpConfig::default(),
            unlabeled_fraction: 0.20,
            eval_fraction: None,
            seed: 7,
        }
    }
}

impl DomainGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_base_classes == 0 || self.n_target_classes == 0 {
            return Err(Error::config("class counts must be positive"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("samples_per_class must be positive"));
        }
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::config("dimensions must be positive"));
        }
        if self.latent_dim > self.input_dim {
            return Err(Error::config("latent_dim cannot exceed input_dim"));
        }
        if self.cluster_std < 0.0 {
            return Err(Error::config("cluster_std must be nonnegative"));
        }
        if !(0.0 < self.unlabeled_fraction && self.unlabeled_fraction < 1.0) {
            return Err(Error::config("unlabeled_fraction must lie in (0, 1)"));
        }
        if let Some(f) = self.eval_fraction {
            if !(0.0 < f && f < 1.0) {
                return Err(Error::config("eval_fraction must lie in (0, 1)"));
            }
            if self.unlabeled_fraction + f > 1.0 + 1e-12 {
                return Err(Error::config(
                    "unlabeled_fraction + eval_fraction cannot exceed 1",
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.warp.severity) {
            return Err(Error::config("warp severity must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The seeded generative model behind `generate_domains`. Kept internal;
/// unit tests reach in to verify sampling statistics.
struct DomainModel {
    cfg: DomainGenConfig,
    /// `(n_base + n_target) x latent_dim` class centers.
    centers: Vec<Vec<f64>>,
    /// `input_dim x latent_dim`, orthonormal columns (an isometry).
    embed: Vec<f64>,
    /// `input_dim x input_dim` orthogonal rotation used by the warp.
    rotation: Vec<f64>,
    /// Per-coordinate gains inside the tanh.
    gains: Vec<f64>,
}

impl DomainModel {
    fn new(cfg: &DomainGenConfig) -> DomainModel {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut center_rng = rng_for(cfg.seed, stream::GEN_CENTERS);
        let total = cfg.n_base_classes + cfg.n_target_classes;
        let centers: Vec<Vec<f64>> = (0..total)
            .map(|_| {
                (0..cfg.latent_dim)
                    .map(|_| normal.sample(&mut center_rng))
                    .collect()
            })
            .collect();

        let mut embed_rng = rng_for(cfg.seed, stream::GEN_EMBED);
        let embed = orthonormal_columns(cfg.input_dim, cfg.latent_dim, &mut embed_rng);

        let mut warp_rng = rng_for(cfg.seed, stream::GEN_WARP);
        let rotation = orthonormal_columns(cfg.input_dim, cfg.input_dim, &mut warp_rng);
        let gains: Vec<f64> = (0..cfg.input_dim)
            .map(|_| cfg.warp.gain * warp_rng.gen_range(0.5..1.5))
            .collect();

        DomainModel {
            cfg: *cfg,
            centers,
            embed,
            rotation,
            gains,
        }
    }

    /// One embedded sample from the given global class.
    fn sample(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let cfg = &self.cfg;
        let z: Vec<f64> = self.centers[class]
            .iter()
            .map(|&c| c + cfg.cluster_std * normal.sample(rng))
            .collect();
        self.embed_latent(&z)
    }

    fn embed_latent(&self, z: &[f64]) -> Vec<f64> {
        let (d, l) = (self.cfg.input_dim, self.cfg.latent_dim);
        let mut x = vec![0.0; d];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = (0..l).map(|j| self.embed[i * l + j] * z[j]).sum();
        }
        x
    }

    /// `(1 - s) * x + s * R . tanh(g * x)`
    fn warp(&self, x: &[f64]) -> Vec<f64> {
        let s = self.cfg.warp.severity;
        if s == 0.0 {
            return x.to_vec();
        }
        let d = self.cfg.input_dim;
        let squashed: Vec<f64> = x
            .iter()
            .zip(&self.gains)
            .map(|(&v, &g)| (g * v).tanh())
            .collect();
        let mut out = vec![0.0; d];
        for (i, o) in out.iter_mut().enumerate() {
            let rotated: f64 = (0..d).map(|j| self.rotation[i * d + j] * squashed[j]).sum();
            *o = (1.0 - s) * x[i] + s * rotated;
        }
        out
    }
}

/// Generate the base dataset, the unlabeled target pool, and the target
/// evaluation set. Deterministic given `cfg.seed`.
pub fn generate_domains(
    cfg: &DomainGenConfig,
) -> Result<(LabeledDataset, UnlabeledDataset, LabeledDataset)> {
    cfg.validate()?;
    let model = DomainModel::new(cfg);
    let mut sample_rng = rng_for(cfg.seed, stream::GEN_SAMPLES);
    let mut split_rng = rng_for(cfg.seed, stream::GEN_SPLIT);

    let per_class = cfg.samples_per_class;
    let n_unlabeled = (cfg.unlabeled_fraction * per_class as f64).round() as usize;
    let n_eval = match cfg.eval_fraction {
        Some(f) => (f * per_class as f64).round() as usize,
        None => per_class - n_unlabeled,
    };
    if n_unlabeled == 0 || n_eval == 0 || n_unlabeled + n_eval > per_class {
        return Err(Error::config(format!(
            "split fractions leave an invalid partition at {per_class} samples \
             per class ({n_unlabeled} unlabeled, {n_eval} eval)"
        )));
    }

    let mut base = SampleSet::empty(cfg.input_dim);
    let mut base_labels = Vec::new();
    for class in 0..cfg.n_base_classes {
        for _ in 0..per_class {
            base.push_row(&model.sample(class, &mut sample_rng));
            base_labels.push(class);
        }
    }

    // Per class, a seeded shuffle fixes the order once; the unlabeled pool
    // takes rows from the front and the evaluation split from the back, so
    // the evaluation rows stay identical when only the unlabeled amount
    // changes (any middle rows are simply unused).
    let mut unlabeled = SampleSet::empty(cfg.input_dim);
    let mut hidden = Vec::new();
    let mut eval = SampleSet::empty(cfg.input_dim);
    let mut eval_labels = Vec::new();
    for target_class in 0..cfg.n_target_classes {
        let global = cfg.n_base_classes + target_class;
        let rows: Vec<Vec<f64>> = (0..per_class)
            .map(|_| model.warp(&model.sample(global, &mut sample_rng)))
            .collect();
        let mut order: Vec<usize> = (0..per_class).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut split_rng);
        for &i in &order[..n_unlabeled] {
            unlabeled.push_row(&rows[i]);
            hidden.push(target_class);
        }
        for &i in &order[per_class - n_eval..] {
            eval.push_row(&rows[i]);
            eval_labels.push(target_class);
        }
    }

    let base_names: Vec<String> = (0..cfg.n_base_classes).map(|c| format!("c{c}")).collect();
    let eval_names: Vec<String> = (0..cfg.n_target_classes)
        .map(|c| format!("c{}", cfg.n_base_classes + c))
        .collect();
    Ok((
        LabeledDataset::new(base, base_labels, cfg.n_base_classes, Some(base_names))?,
        UnlabeledDataset::new(unlabeled, Some(hidden), cfg.n_target_classes)?,
        LabeledDataset::new(eval, eval_labels, cfg.n_target_classes, Some(eval_names))?,
    ))
}

/// `rows x cols` matrix with orthonormal columns, from Gram-Schmidt over
/// seeded Gaussian draws. Requires `cols <= rows`.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    // column-major scratch
    let mut columns: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| normal.sample(rng)).collect())
        .collect();
    for j in 0..cols {
        for prev in 0..j {
            let dot: f64 = columns[j]
                .iter()
                .zip(&columns[prev])
                .map(|(a, b)| a * b)
                .sum();
            let prev_col = columns[prev].clone();
            for (v, p) in columns[j].iter_mut().zip(prev_col) {
                *v -= dot * p;
            }
        }
        let norm: f64 = columns[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in columns[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out[i * cols + j] = v;
        }
    }
    out
}
