//! Episodic few-shot evaluation and clustering-quality analysis.
//!
//! Few-shot protocol: features come from the frozen encoder, a multinomial
//! logistic-regression classifier is fit on the support features of each
//! episode, and top-1 accuracy is scored on the query features. Reports
//! carry the mean and the 95% confidence half-width over episodes.
//!
//! Clustering protocol: k-means over target features with k set to the true
//! class count, scored by the V-measure against ground-truth labels.
//!
//! Episodes are independent given their derived seeds (`seed + index`), so
//! they evaluate in parallel with results aggregated in episode order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_episode, Episode, LabeledDataset, SampleSet};
use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::seeding::{episode_rng, rng_for, stream};

/// Logistic-regression fitting hyperparameters: full-batch gradient descent
/// on mean cross-entropy plus `l2/2 * ||W||^2`, zero-initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrFitConfig {
    pub l2: f64,
    pub iterations: usize,
    pub step_size: f64,
}

impl Default for LrFitConfig {
    fn default() -> Self {
        LrFitConfig {
            l2: 1.0,
            iterations: 500,
            step_size: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub way: usize,
    pub shots: Vec<usize>,
    pub queries_per_class: usize,
    pub n_episodes: usize,
    pub lr_fit: LrFitConfig,
    /// L2-normalize feature rows before fitting (off by default; features
    /// are used raw).
    pub normalize_features: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            way: 5,
            shots: vec![1, 5],
            queries_per_class: 15,
            n_episodes: 600,
            lr_fit: LrFitConfig::default(),
            normalize_features: false,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 {
            return Err(Error::config("way must be at least 2"));
        }
        if self.n_episodes < 2 {
            return Err(Error::config(
                "n_episodes must be at least 2 for a confidence interval",
            ));
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::config("shots must be positive"));
        }
        if self.queries_per_class == 0 {
            return Err(Error::config("queries_per_class must be positive"));
        }
        Ok(())
    }
}

/// Per-experiment few-shot metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Identity of the feature extractor (checkpoint hash or name).
    pub encoder_id: String,
    pub way: usize,
    pub shot: usize,
    pub n_episodes: usize,
    /// Mean top-1 accuracy, percent.
    pub mean_accuracy: f64,
    /// 95% confidence half-width: `1.96 * std / sqrt(n)`, percent.
    pub ci95: f64,
    /// Per-episode accuracies, percent, in episode order.
    pub per_episode: Vec<f64>,
    pub seed: u64,
    /// Echo of the evaluation settings that produced this report.
    pub config: EvalConfig,
}

/// Clustering-quality metrics, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub v_measure: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub k: usize,
    pub seed: u64,
}

/// Multinomial logistic regression `W: [n_classes x dim]`, `b: [n_classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_classes: usize,
    pub dim: usize,
}

impl LinearClassifier {
    fn zeros(n_classes: usize, dim: usize) -> LinearClassifier {
        LinearClassifier {
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
            n_classes,
            dim,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let wrow = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + wrow.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Top-1 class, first index on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }

    /// Mean cross-entropy plus the L2 penalty, the fitting objective.
    pub fn objective(&self, features: &SampleSet, labels: &[usize], l2: f64) -> f64 {
        let mut sum = 0.0;
        for (row, &label) in features.rows().zip(labels) {
            let probs = softmax_vec(&self.logits(row));
            sum += -probs[label].max(crate::ops::LOG_EPS).ln();
        }
        let penalty = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        sum / labels.len() as f64 + penalty
    }
}

fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Deterministic multinomial logistic regression: fixed-budget full-batch
/// gradient descent from zero init. Every class in `[0, n_classes)` must
/// appear in `labels`.
///
/// The configured step size is divided by a curvature upper bound
/// `max_i ||x_i||^2 / 2 + l2` whenever that bound exceeds 1, so the descent
/// stays stable for any feature scale while small-scale features keep the
/// configured step unchanged.
pub fn fit_logistic_regression(
    features: &SampleSet,
    labels: &[usize],
    n_classes: usize,
    cfg: &LrFitConfig,
) -> Result<LinearClassifier> {
    let n = features.len();
    if n != labels.len() {
        return Err(Error::shape(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    let mut seen = vec![false; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::contract(format!("label {l} out of range")));
        }
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::contract(format!(
            "class {missing} absent from the labels"
        )));
    }

    let dim = features.dim();
    let mut model = LinearClassifier::zeros(n_classes, dim);
    let inv_n = 1.0 / n as f64;
    let max_sq_norm = features
        .rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let curvature = (0.5 * max_sq_norm + cfg.l2).max(1.0);
    let step = cfg.step_size / curvature;
    let mut grad_w = vec![0.0; n_classes * dim];
    let mut grad_b = vec![0.0; n_classes];
    for _ in 0..cfg.iterations {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        for (row, &label) in features.rows().zip(labels) {
            let mut probs = softmax_vec(&model.logits(row));
            probs[label] -= 1.0;
            for (c, &residual) in probs.iter().enumerate() {
                grad_b[c] += residual * inv_n;
                let grow = &mut grad_w[c * dim..(c + 1) * dim];
                for (g, &x) in grow.iter_mut().zip(row) {
                    *g += residual * x * inv_n;
                }
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= step * (g + cfg.l2 * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&grad_b) {
            *b -= step * g;
        }
    }
    Ok(model)
}

/// Mean and 95% CI half-width (`1.96 * s / sqrt(n)`, sample std).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Encoder features for a whole dataset as a plain matrix.
pub fn extract_feature_set(encoder: &Encoder, samples: &SampleSet) -> Result<SampleSet> {
    let features = encoder.extract_features(&samples.to_tensor())?;
    SampleSet::new(encoder.embed_dim(), features.data())
}

fn normalize_rows(features: &mut SampleSet) {
    let dim = features.dim();
    let mut data = features.data().to_vec();
    for row in data.chunks_exact_mut(dim) {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    *features = SampleSet::new(dim, data).expect("same shape");
}

/// Accuracy (percent) of one episode evaluated in feature space.
fn episode_accuracy(
    features: &SampleSet,
    episode: &Episode,
    lr_fit: &LrFitConfig,
) -> Result<f64> {
    let support = features.gather(&episode.support_indices);
    let model = fit_logistic_regression(&support, &episode.support_labels, episode.way, lr_fit)?;
    let mut correct = 0usize;
    for (&qi, &label) in episode.query_indices.iter().zip(&episode.query_labels) {
        if model.predict(features.row(qi)) == label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / episode.query_labels.len() as f64)
}

/// Episodes shared across encoders for paired comparison: episode `i` is
/// drawn with the generator seeded by `seed + i`.
pub fn sample_episode_suite(
    dataset: &LabeledDataset,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    (0..n_episodes)
        .map(|i| {
            let mut rng = episode_rng(seed, i);
            sample_episode(dataset, way, shot, queries_per_class, &mut rng)
                .map_err(|e| Error::Episode(format!("episode {i}: {e}")))
        })
        .collect()
}

/// Full episodic evaluation of one encoder, one report per configured shot.
pub fn evaluate_fewshot(
    encoder: &Encoder,
    target_eval: &LabeledDataset,
    cfg: &EvalConfig,
    encoder_id: &str,
) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let mut features = extract_feature_set(encoder, target_eval.samples())?;
    if cfg.normalize_features {
        normalize_rows(&mut features);
    }
    let mut reports = Vec::with_capacity(cfg.shots.len());
    for &shot in &cfg.shots {
        let episodes = sample_episode_suite(
            target_eval,
            cfg.way,
            shot,
            cfg.queries_per_class,
            cfg.n_episodes,
            cfg.seed,
        )?;
        let per_episode: Vec<f64> = episodes
            .par_iter()
            .map(|ep| episode_accuracy(&features, ep, &cfg.lr_fit))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, ci) = mean_ci95(&per_episode);
        reports.push(EvalReport {
            encoder_id: encoder_id.to_string(),
            way: cfg.way,
            shot,
            n_episodes: cfg.n_episodes,
            mean_accuracy: mean,
            ci95: ci,
            per_episode,
            seed: cfg.seed,
            config: cfg.clone(),
        });
    }
    Ok(reports)
}

/// One restart of Lloyd's algorithm with k-means++ seeding.
struct KmeansRun {
    assignments: Vec<usize>,
    inertia: f64,
    #[allow(dead_code)] // asserted monotone by the unit tests
    inertia_history: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(features: &SampleSet, k: usize, rng: &mut ChaCha8Rng) -> KmeansRun {
    let n = features.len();
    let dim = features.dim();

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(features.row(rng.gen_range(0..n)).to_vec());
    let mut dists: Vec<f64> = (0..n)
        .map(|i| squared_distance(features.row(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = dists.iter().sum();
        let next = if total > 0.0 {
            let mut draw = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in dists.iter().enumerate() {
                if draw < d {
                    pick = i;
                    break;
                }
                draw -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(features.row(next).to_vec());
        for (i, d) in dists.iter_mut().enumerate() {
            *d = d.min(squared_distance(features.row(i), centroids.last().unwrap()));
        }
    }

    let mut assignments = vec![0usize; n];
    let mut inertia_history = Vec::new();
    let mut inertia = f64::INFINITY;
    for _ in 0..300 {
        // assignment step
        inertia = 0.0;
        for (i, a) in assignments.iter_mut().enumerate() {
            let row = features.row(i);
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(row, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            *a = best;
            inertia += best_d;
        }
        inertia_history.push(inertia);

        // update step
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(features.row(i)) {
                *s += x;
            }
        }
        let mut max_shift = 0.0f64;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            if counts[c] == 0 {
                // re-seed an empty cluster from the farthest point
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = squared_distance(features.row(a), &sums[assignments[a]]);
                        let db = squared_distance(features.row(b), &sums[assignments[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                *centroid = features.row(far).to_vec();
                max_shift = f64::INFINITY;
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut shift = 0.0;
            for (cv, s) in centroid.iter_mut().zip(&sums[c]) {
                let newv = s * inv;
                shift += (newv - *cv) * (newv - *cv);
                *cv = newv;
            }
            max_shift = max_shift.max(shift.sqrt());
        }
        if max_shift <= 1e-8 {
            break;
        }
    }
    KmeansRun {
        assignments,
        inertia,
        inertia_history,
    }
}

/// Seeded k-means with 10 restarts, keeping the lowest-inertia clustering.
pub fn kmeans(features: &SampleSet, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::contract(format!(
            "kmeans needs 1 <= k <= {n}, got {k}"
        )));
    }
    let mut best: Option<KmeansRun> = None;
    for restart in 0..10u64 {
        let mut rng = rng_for(seed, stream::KMEANS + restart);
        let run = lloyd(features, k, &mut rng);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart").assignments)
}

fn entropy_from_counts(counts: &[usize], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// V-measure of a predicted clustering against ground truth: harmonic mean
/// of homogeneity `1 - H(C|K)/H(C)` and completeness `1 - H(K|C)/H(K)`
/// (natural logs; a vanishing denominator yields 1).
pub fn v_measure(truth: &[usize], predicted: &[usize]) -> Result<ClusterReport> {
    if truth.len() != predicted.len() {
        return Err(Error::contract(format!(
            "{} truth labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::contract("v_measure of empty labelings"));
    }
    // compact both label spaces
    let remap = |labels: &[usize]| -> (Vec<usize>, usize) {
        let mut map = std::collections::HashMap::new();
        let compact: Vec<usize> = labels
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        (compact, map.len())
    };
    let (t, n_t) = remap(truth);
    let (p, n_p) = remap(predicted);
    let n = truth.len() as f64;

    let mut contingency = vec![0usize; n_t * n_p];
    let mut t_counts = vec![0usize; n_t];
    let mut p_counts = vec![0usize; n_p];
    for (&ti, &pi) in t.iter().zip(&p) {
        contingency[ti * n_p + pi] += 1;
        t_counts[ti] += 1;
        p_counts[pi] += 1;
    }

    let h_t = entropy_from_counts(&t_counts, n);
    let h_p = entropy_from_counts(&p_counts, n);

    // H(C|K): for each predicted cluster, the entropy of true classes in it
    let mut h_t_given_p = 0.0;
    for pi in 0..n_p {
        let cluster_size = p_counts[pi] as f64;
        for ti in 0..n_t {
            let joint = contingency[ti * n_p + pi];
            if joint > 0 {
                let frac = joint as f64 / cluster_size;
                h_t_given_p += -(joint as f64 / n) * frac.ln();
            }
        }
    }
    // H(K|C)
    let mut h_p_given_t = 0.0;
    for ti in 0..n_t {
        let class_size = t_counts[ti] as f64;
        for pi in 0..n_p {
            let joint = contingency[ti * n_p + pi];
            if joint > 0 {
                let frac = joint as f64 / class_size;
                h_p_given_t += -(joint as f64 / n) * frac.ln();
            }
        }
    }

    let homogeneity = if h_t == 0.0 { 1.0 } else { 1.0 - h_t_given_p / h_t };
    let completeness = if h_p == 0.0 { 1.0 } else { 1.0 - h_p_given_t / h_p };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(ClusterReport {
        v_measure: v.clamp(0.0, 1.0),
        homogeneity: homogeneity.clamp(0.0, 1.0),
        completeness: completeness.clamp(0.0, 1.0),
        k: n_p,
        seed: 0,
    })
}

/// Cluster target features with k = true class count and score against the
/// ground-truth labels.
pub fn cluster_analysis(
    encoder: &Encoder,
    samples: &SampleSet,
    truth: &[usize],
    k: usize,
    seed: u64,
) -> Result<ClusterReport> {
    let features = extract_feature_set(encoder, samples)?;
    let assignments = kmeans(&features, k, seed)?;
    let mut report = v_measure(truth, &assignments)?;
    report.k = k;
    report.seed = seed;
    Ok(report)
}

/// One encoder's row in a paired comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub reports: Vec<EvalReport>,
    pub cluster: Option<ClusterReport>,
}

/// Evaluate several encoders against the same episode sequence (shared
/// seed), optionally with a clustering column computed on the unlabeled
/// pool. Per-episode accuracy lists pair up 1:1 across encoders.
pub fn compare_encoders(
    encoders: &[(String, &Encoder)],
    target_eval: &LabeledDataset,
    cluster_input: Option<(&SampleSet, &[usize], usize)>,
    cfg: &EvalConfig,
) -> Result<Vec<ComparisonRow>> {
    cfg.validate()?;
    if let Some((first, rest)) = encoders.split_first() {
        for (name, enc) in rest {
            if enc.input_dim() != first.1.input_dim() {
                return Err(Error::config(format!(
                    "encoder {name} input dim {} differs from {}",
                    enc.input_dim(),
                    first.1.input_dim()
                )));
            }
        }
    }
    let mut rows = Vec::with_capacity(encoders.len());
    for (name, encoder) in encoders {
        let reports = evaluate_fewshot(encoder, target_eval, cfg, name)?;
        let cluster = match cluster_input {
            Some((samples, truth, k)) => Some(cluster_analysis(encoder, samples, truth, k, cfg.seed)?),
            None => None,
        };
        rows.push(ComparisonRow {
            name: name.clone(),
            reports,
            cluster,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_network, Encoder, Linear};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn identity_encoder(dim: usize) -> Encoder {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Encoder::from_layers(vec![Linear::from_values(dim, dim, w, vec![0.0; dim]).unwrap()])
            .unwrap()
    }

    fn blob_features() -> (SampleSet, Vec<usize>) {
        // three tight, well-separated 2-d blobs
        let mut s = SampleSet::empty(2);
        let mut labels = Vec::new();
        let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for i in 0..15 {
                let jitter = (i as f64 - 7.0) * 0.02;
                s.push_row(&[cx + jitter, cy - jitter]);
                labels.push(c);
            }
        }
        (s, labels)
    }

    #[test]
    fn logreg_separates_two_clusters() {
        let mut s = SampleSet::empty(1);
        let mut labels = Vec::new();
        for i in 0..10 {
            s.push_row(&[2.0 + 0.05 * i as f64]);
            labels.push(1);
            s.push_row(&[-2.0 - 0.05 * i as f64]);
            labels.push(0);
        }
        let model = fit_logistic_regression(&s, &labels, 2, &LrFitConfig::default()).unwrap();
        let correct = s
            .rows()
            .zip(&labels)
            .filter(|(row, &l)| model.predict(row) == l)
            .count();
        assert_eq!(correct, 20, "training accuracy below 1.0");
    }

    #[test]
    fn logreg_identical_features_stay_uniform() {
        let s = SampleSet::new(3, vec![0.5, 0.5, 0.5].repeat(10)).unwrap();
        let labels: Vec<usize> = (0..10).map(|i| i % 5).collect();
        let model = fit_logistic_regression(&s, &labels, 5, &LrFitConfig::default()).unwrap();
        // balanced labels with identical features keep the gradient at zero
        assert!(model.weights.iter().all(|&w| w == 0.0));
        assert_eq!(model.predict(&[0.5, 0.5, 0.5]), 0);
    }

    #[test]
    fn logreg_descends_from_zero_init() {
        let (s, labels) = blob_features();
        let cfg = LrFitConfig::default();
        let zero = LinearClassifier::zeros(3, 2);
        let fitted = fit_logistic_regression(&s, &labels, 3, &cfg).unwrap();
        assert!(
            fitted.objective(&s, &labels, cfg.l2) <= zero.objective(&s, &labels, cfg.l2),
            "objective increased during fitting"
        );
    }

    #[test]
    fn logreg_missing_class_is_contract_error() {
        let s = SampleSet::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            fit_logistic_regression(&s, &[0, 0, 2], 3, &LrFitConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn ci_of_constant_accuracies_is_zero() {
        let (mean, ci) = mean_ci95(&[80.0, 80.0]);
        assert_eq!(mean, 80.0);
        assert_eq!(ci, 0.0);
    }

    #[test]
    fn kmeans_k1_centroid_is_mean_assignment() {
        let (s, _) = blob_features();
        let a = kmeans(&s, 1, 3).unwrap();
        assert!(a.iter().all(|&c| c == 0));
    }

    #[test]
    fn kmeans_k_equals_n_gives_zero_inertia() {
        let s = SampleSet::new(1, vec![0.0, 5.0, 11.0, -4.0]).unwrap();
        let mut rng = rng_for(1, stream::KMEANS);
        let run = lloyd(&s, 4, &mut rng);
        assert_eq!(run.inertia, 0.0);
        let mut sorted = run.assignments.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn kmeans_recovers_blobs_up_to_permutation() {
        let (s, truth) = blob_features();
        let a = kmeans(&s, 3, 7).unwrap();
        let report = v_measure(&truth, &a).unwrap();
        assert_close(report.v_measure, 1.0, 1e-12);
    }

    #[test]
    fn kmeans_rejects_k_larger_than_n() {
        let s = SampleSet::new(1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(kmeans(&s, 3, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn kmeans_inertia_never_increases() {
        let (s, _) = blob_features();
        for seed in 0..5 {
            let mut rng = rng_for(seed, stream::KMEANS);
            let run = lloyd(&s, 3, &mut rng);
            for w in run.inertia_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "inertia rose: {w:?}");
            }
        }
    }

    #[test]
    fn v_measure_perfect_and_degenerate_cases() {
        // relabeled but identical partition
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [5, 5, 9, 9, 1, 1];
        let r = v_measure(&truth, &pred).unwrap();
        assert_close(r.v_measure, 1.0, 1e-12);

        // a single predicted cluster has zero homogeneity
        let r = v_measure(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!(r.homogeneity, 0.0);
        assert_eq!(r.v_measure, 0.0);

        // self-agreement is exact
        let x = [3, 1, 4, 1, 5, 9, 2, 6];
        let r = v_measure(&x, &x).unwrap();
        assert_close(r.v_measure, 1.0, 1e-12);
    }

    #[test]
    fn v_measure_matches_brute_force_oracle() {
        // Independent evaluation from joint probabilities for
        // truth [0,0,1,1], predicted [0,1,1,1].
        let truth = [0usize, 0, 1, 1];
        let pred = [0usize, 1, 1, 1];

        let h = |ps: &[f64]| -> f64 {
            ps.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum()
        };
        let h_c = h(&[0.5, 0.5]);
        let h_k = h(&[0.25, 0.75]);
        // clusters: {t=0} and {t=0 x1, t=1 x2}
        let h_c_given_k = 0.25 * h(&[1.0]) + 0.75 * h(&[1.0 / 3.0, 2.0 / 3.0]);
        let h_k_given_c = 0.5 * h(&[0.5, 0.5]) + 0.5 * h(&[1.0]);
        let hom = 1.0 - h_c_given_k / h_c;
        let com = 1.0 - h_k_given_c / h_k;
        let expected = 2.0 * hom * com / (hom + com);

        let r = v_measure(&truth, &pred).unwrap();
        assert_close(r.homogeneity, hom, 1e-12);
        assert_close(r.completeness, com, 1e-12);
        assert_close(r.v_measure, expected, 1e-12);
    }

    #[test]
    fn v_measure_is_permutation_invariant() {
        let truth = [0, 1, 2, 0, 1, 2, 1, 1, 0];
        let pred = [1, 1, 0, 2, 2, 0, 1, 0, 2];
        let base = v_measure(&truth, &pred).unwrap();
        // relabel both sides through arbitrary injections
        let relabel = |labels: &[usize], offset: usize| -> Vec<usize> {
            labels.iter().map(|&l| (l * 7 + offset) % 13).collect()
        };
        for offset in 0..5 {
            let r = v_measure(&relabel(&truth, offset), &relabel(&pred, offset)).unwrap();
            assert_close(r.v_measure, base.v_measure, 1e-12);
        }
    }

    #[test]
    fn v_measure_length_mismatch_is_contract_error() {
        assert!(matches!(
            v_measure(&[0, 1], &[0, 1, 2]),
            Err(Error::Contract(_))
        ));
    }

    fn clustered_eval_set(per_class: usize) -> LabeledDataset {
        let mut s = SampleSet::empty(2);
        let mut labels = Vec::new();
        let centers = [(0.0, 0.0), (8.0, 0.0), (0.0, 8.0), (8.0, 8.0), (4.0, -6.0)];
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for i in 0..per_class {
                let j = (i as f64 / per_class as f64 - 0.5) * 0.6;
                s.push_row(&[cx + j, cy - j * 0.5]);
                labels.push(c);
            }
        }
        LabeledDataset::new(s, labels, 5, None).unwrap()
    }

    #[test]
    fn fewshot_identity_encoder_on_separated_clusters_is_accurate() {
        let ds = clustered_eval_set(30);
        let cfg = EvalConfig {
            shots: vec![5],
            n_episodes: 40,
            ..EvalConfig::default()
        };
        let reports = evaluate_fewshot(&identity_encoder(2), &ds, &cfg, "identity").unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].mean_accuracy >= 95.0, "{}", reports[0].mean_accuracy);
    }

    #[test]
    fn fewshot_constant_encoder_scores_chance() {
        let ds = clustered_eval_set(30);
        // zero weights map every input to the same feature vector
        let constant = Encoder::from_layers(vec![
            Linear::from_values(2, 3, vec![0.0; 6], vec![0.25; 3]).unwrap(),
        ])
        .unwrap();
        let cfg = EvalConfig {
            shots: vec![5],
            n_episodes: 30,
            ..EvalConfig::default()
        };
        let reports = evaluate_fewshot(&constant, &ds, &cfg, "constant").unwrap();
        assert_close(reports[0].mean_accuracy, 20.0, 1e-9);
        assert_close(reports[0].ci95, 0.0, 1e-9);
    }

    #[test]
    fn fewshot_reports_are_deterministic_and_ci_recomputable() {
        let ds = clustered_eval_set(25);
        let cfg = EvalConfig {
            shots: vec![1, 5],
            n_episodes: 20,
            ..EvalConfig::default()
        };
        let net = init_network(71, &[2, 6, 4], 5).unwrap();
        let r1 = evaluate_fewshot(&net.encoder, &ds, &cfg, "net").unwrap();
        let r2 = evaluate_fewshot(&net.encoder, &ds, &cfg, "net").unwrap();
        assert_eq!(r1, r2);
        for rep in &r1 {
            let (mean, ci) = mean_ci95(&rep.per_episode);
            assert_close(rep.mean_accuracy, mean, 1e-10);
            assert_close(rep.ci95, ci, 1e-10);
        }
    }

    #[test]
    fn comparison_rows_pair_up_under_shared_seed() {
        let ds = clustered_eval_set(25);
        let a = init_network(81, &[2, 6, 4], 5).unwrap();
        let cfg = EvalConfig {
            shots: vec![5],
            n_episodes: 10,
            ..EvalConfig::default()
        };
        let encoders = vec![
            ("one".to_string(), &a.encoder),
            ("two".to_string(), &a.encoder),
        ];
        let rows = compare_encoders(&encoders, &ds, None, &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        // identical encoders produce identical rows episode by episode
        assert_eq!(rows[0].reports[0].per_episode, rows[1].reports[0].per_episode);
        // paired mean difference equals difference of means
        let d_means = rows[0].reports[0].mean_accuracy - rows[1].reports[0].mean_accuracy;
        let paired: f64 = rows[0].reports[0]
            .per_episode
            .iter()
            .zip(&rows[1].reports[0].per_episode)
            .map(|(x, y)| x - y)
            .sum::<f64>()
            / rows[0].reports[0].per_episode.len() as f64;
        assert_close(d_means, paired, 1e-12);
    }
}
