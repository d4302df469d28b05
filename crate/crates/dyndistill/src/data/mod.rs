//! Datasets, augmentation, episode sampling, and batch iteration.
//!
//! The training loop only ever sees a [`SampleSet`] for unlabeled data: the
//! hidden labels kept for post-hoc clustering analysis live behind a
//! separate accessor on [`UnlabeledDataset`] and do not travel with the
//! sample view, so the training path cannot read them by construction.

mod generate;
mod io;

pub use generate::{generate_domains, DomainGenConfig, WarpConfig};

use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A dense row-major matrix of samples, `len x dim`. This is the label-free
/// view handed to training code.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<SampleSet> {
        if dim == 0 {
            return Err(Error::config("sample dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::shape(format!(
                "sample data length {} not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(SampleSet { dim, data })
    }

    pub fn empty(dim: usize) -> SampleSet {
        SampleSet { dim, data: vec![] }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row width mismatch");
        self.data.extend_from_slice(row);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The whole set as a constant `[len x dim]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.len(), self.dim], self.data.clone()).expect("consistent sample set")
    }

    /// Selected rows as a constant `[indices.len() x dim]` tensor.
    pub fn gather_tensor(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(&[indices.len(), self.dim], data).expect("consistent gather")
    }

    pub fn gather(&self, indices: &[usize]) -> SampleSet {
        let mut out = SampleSet::empty(self.dim);
        for &i in indices {
            out.push_row(self.row(i));
        }
        out
    }
}

/// Base-domain samples with labels in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: SampleSet,
    labels: Vec<usize>,
    n_classes: usize,
    class_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(
        samples: SampleSet,
        labels: Vec<usize>,
        n_classes: usize,
        class_names: Option<Vec<String>>,
    ) -> Result<LabeledDataset> {
        if samples.is_empty() {
            return Err(Error::config("labeled dataset needs at least one sample"));
        }
        if labels.len() != samples.len() {
            return Err(Error::shape(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if let Some(names) = &class_names {
            if names.len() != n_classes {
                return Err(Error::config("class_names length must equal n_classes"));
            }
        }
        Ok(LabeledDataset {
            samples,
            labels,
            n_classes,
            class_names,
        })
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    /// Sample indices grouped by class label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }
}

/// Target-domain samples without training-visible labels. The ground-truth
/// labels, when known, are retained solely for post-hoc clustering scores.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    samples: SampleSet,
    hidden_labels: Option<Vec<usize>>,
    n_hidden_classes: usize,
}

impl UnlabeledDataset {
    pub fn new(
        samples: SampleSet,
        hidden_labels: Option<Vec<usize>>,
        n_hidden_classes: usize,
    ) -> Result<UnlabeledDataset> {
        if samples.is_empty() {
            return Err(Error::config("unlabeled dataset needs at least one sample"));
        }
        if let Some(h) = &hidden_labels {
            if h.len() != samples.len() {
                return Err(Error::shape("hidden label count mismatch".to_string()));
            }
            if h.iter().any(|&l| l >= n_hidden_classes) {
                return Err(Error::contract("hidden label out of range".to_string()));
            }
        }
        Ok(UnlabeledDataset {
            samples,
            hidden_labels,
            n_hidden_classes,
        })
    }

    /// The label-free view used by training.
    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    /// Ground-truth labels for clustering analysis only. Never consumed by
    /// the training path, which receives just [`Self::samples`].
    pub fn hidden_labels(&self) -> Option<&[usize]> {
        self.hidden_labels.as_deref()
    }

    pub fn n_hidden_classes(&self) -> usize {
        self.n_hidden_classes
    }
}

/// Vector-domain corruption: additive Gaussian noise, coordinate masking,
/// and a random global rescale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub noise_std: f64,
    pub mask_fraction: f64,
    pub scale_range: (f64, f64),
}

impl AugmentationSpec {
    pub const fn identity() -> AugmentationSpec {
        AugmentationSpec {
            noise_std: 0.0,
            mask_fraction: 0.0,
            scale_range: (1.0, 1.0),
        }
    }

    /// Weak corruption: fed to the teacher under the default pairing.
    pub const fn weak_default() -> AugmentationSpec {
        AugmentationSpec {
            noise_std: 0.05,
            mask_fraction: 0.0,
            scale_range: (0.95, 1.05),
        }
    }

    /// Strong corruption: fed to the student under the default pairing.
    pub const fn strong_default() -> AugmentationSpec {
        AugmentationSpec {
            noise_std: 0.25,
            mask_fraction: 0.20,
            scale_range: (0.8, 1.2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_std < 0.0 {
            return Err(Error::config("noise_std must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::config("mask_fraction must lie in [0, 1)"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config("scale_range needs 0 < lo <= hi"));
        }
        Ok(())
    }
}

/// `sample' = scale * (sample + noise)` with `round(mask_fraction * dim)`
/// randomly chosen coordinates zeroed afterwards. Draw order is fixed
/// (noise, scale, mask) so identical specs consume the generator
/// identically.
pub fn augment(sample: &[f64], spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out: Vec<f64> = sample
        .iter()
        .map(|&x| x + spec.noise_std * normal.sample(rng))
        .collect();
    let (lo, hi) = spec.scale_range;
    let scale = if lo < hi { rng.gen_range(lo..hi) } else { lo };
    for x in out.iter_mut() {
        *x *= scale;
    }
    let n_mask = (spec.mask_fraction * sample.len() as f64).round() as usize;
    if n_mask > 0 {
        for i in index_sample(rng, sample.len(), n_mask) {
            out[i] = 0.0;
        }
    }
    out
}

/// One N-way K-shot task: a labeled support set and a disjoint query set
/// drawn from the same N classes, labels remapped to `[0, N)`. The original
/// dataset row indices ride along so evaluation can look up precomputed
/// features and so disjointness is checkable by sample identity.
#[derive(Debug, Clone)]
pub struct Episode {
    pub support: SampleSet,
    pub support_labels: Vec<usize>,
    pub support_indices: Vec<usize>,
    pub query: SampleSet,
    pub query_labels: Vec<usize>,
    pub query_indices: Vec<usize>,
    pub way: usize,
    pub shot: usize,
}

/// Sample an episode: N classes without replacement, then `K + Q` samples
/// without replacement within each class, the first K forming the support.
pub fn sample_episode(
    dataset: &LabeledDataset,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    if way < 1 || shot < 1 {
        return Err(Error::Episode("way and shot must be at least 1".into()));
    }
    let need = shot + queries_per_class;
    let groups = dataset.indices_by_class();
    let eligible: Vec<usize> = (0..dataset.n_classes())
        .filter(|&c| groups[c].len() >= need)
        .collect();
    if eligible.len() < way {
        return Err(Error::Episode(format!(
            "need {way} classes with >= {need} samples, only {} eligible",
            eligible.len()
        )));
    }
    let chosen: Vec<usize> = eligible
        .choose_multiple(rng, way)
        .copied()
        .collect();

    let dim = dataset.dim();
    let mut support = SampleSet::empty(dim);
    let mut query = SampleSet::empty(dim);
    let mut support_labels = Vec::with_capacity(way * shot);
    let mut query_labels = Vec::with_capacity(way * queries_per_class);
    let mut support_indices = Vec::with_capacity(way * shot);
    let mut query_indices = Vec::with_capacity(way * queries_per_class);
    for (new_label, &class) in chosen.iter().enumerate() {
        let picks = index_sample(rng, groups[class].len(), need);
        for (j, pick) in picks.into_iter().enumerate() {
            let row_index = groups[class][pick];
            let row = dataset.samples().row(row_index);
            if j < shot {
                support.push_row(row);
                support_labels.push(new_label);
                support_indices.push(row_index);
            } else {
                query.push_row(row);
                query_labels.push(new_label);
                query_indices.push(row_index);
            }
        }
    }
    Ok(Episode {
        support,
        support_labels,
        support_indices,
        query,
        query_labels,
        query_indices,
        way,
        shot,
    })
}

/// Shuffled minibatch index lists covering one pass over `n` samples. The
/// final batch may be short.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Endless minibatch stream that reshuffles after each full pass; used to
/// cycle the unlabeled stream against the labeled one.
pub struct CyclingSampler {
    n: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl CyclingSampler {
    pub fn new(n: usize, mut rng: ChaCha8Rng) -> CyclingSampler {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        CyclingSampler {
            n,
            order,
            cursor: 0,
            rng,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        for _ in 0..size.min(self.n.max(1) * size) {
            if batch.len() == size {
                break;
            }
            if self.cursor == self.n {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}
