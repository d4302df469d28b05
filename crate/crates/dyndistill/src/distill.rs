//! Losses, schedules, and the two-step training procedure.
//!
//! Step 1 pretrains the student on the labeled base set with cross-entropy.
//! Step 2 trains jointly: supervised loss on base batches plus a consistency
//! distillation loss on unlabeled target batches, where a sharpened,
//! stop-gradient teacher prediction on one augmented view supervises the
//! student's prediction on a second view. The teacher tracks the student by
//! exponential moving average after every optimizer step.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{
    augment, shuffled_batches, AugmentationSpec, CyclingSampler, LabeledDataset, SampleSet,
};
use crate::error::{Error, Result};
use crate::model::{Network, StudentTeacherPair};
use crate::ops::cross_entropy;
use crate::optim::Sgd;
use crate::seeding::{rng_for, stream};
use crate::tensor::Tensor;

/// Which corruption level feeds the teacher (first slot) versus the student
/// (second slot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentPairing {
    #[serde(rename = "w-s")]
    WeakStrong,
    #[serde(rename = "w-w")]
    WeakWeak,
    #[serde(rename = "s-w")]
    StrongWeak,
    #[serde(rename = "s-s")]
    StrongStrong,
}

impl AugmentPairing {
    pub const ALL: [AugmentPairing; 4] = [
        AugmentPairing::WeakWeak,
        AugmentPairing::WeakStrong,
        AugmentPairing::StrongWeak,
        AugmentPairing::StrongStrong,
    ];

    pub fn teacher_spec(self, cfg: &TrainConfig) -> &AugmentationSpec {
        match self {
            AugmentPairing::WeakStrong | AugmentPairing::WeakWeak => &cfg.weak,
            _ => &cfg.strong,
        }
    }

    pub fn student_spec(self, cfg: &TrainConfig) -> &AugmentationSpec {
        match self {
            AugmentPairing::WeakWeak | AugmentPairing::StrongWeak => &cfg.weak,
            _ => &cfg.strong,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AugmentPairing::WeakStrong => "w-s",
            AugmentPairing::WeakWeak => "w-w",
            AugmentPairing::StrongWeak => "s-w",
            AugmentPairing::StrongStrong => "s-s",
        }
    }
}

/// Every hyperparameter of the two-step schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Base-only pretraining epochs.
    pub epochs_step1: usize,
    /// Joint training epochs.
    pub epochs_step2: usize,
    /// Sharpening temperature for teacher targets.
    pub tau: f64,
    /// Teacher EMA momentum `m`: 1 freezes the teacher, 0 ties it to the
    /// student.
    pub teacher_momentum: f64,
    /// Epochs over which the distillation weight ramps from 0 to 1;
    /// defaults to two thirds of `epochs_step2`.
    pub lambda_ramp_epochs: Option<usize>,
    pub augment_pairing: AugmentPairing,
    pub weak: AugmentationSpec,
    pub strong: AugmentationSpec,
    /// Supervised-only joint phase (the Transfer baseline): lambda stays 0.
    pub transfer_only: bool,
    /// Drop the supervised term in step 2, keeping the pretrained init.
    pub no_base: bool,
    /// Skip step 1 and train jointly from scratch.
    pub one_step: bool,
    /// Confidence cutoff turning soft targets into hard pseudo-labels;
    /// batch entries whose teacher confidence falls below it are dropped.
    pub hard_threshold: Option<f64>,
    /// Use a separate random projection for distillation instead of the
    /// shared classifier head.
    pub separate_distill_head: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs_step1: 50,
            epochs_step2: 30,
            tau: 0.1,
            teacher_momentum: 0.99,
            lambda_ramp_epochs: None,
            augment_pairing: AugmentPairing::WeakStrong,
            weak: AugmentationSpec::weak_default(),
            strong: AugmentationSpec::strong_default(),
            transfer_only: false,
            no_base: false,
            one_step: false,
            hard_threshold: None,
            separate_distill_head: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Resolved ramp length: two thirds of the joint phase unless pinned.
    pub fn ramp_epochs(&self) -> usize {
        self.lambda_ramp_epochs
            .unwrap_or(self.epochs_step2 * 2 / 3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::config("lr must be positive"));
        }
        if self.tau <= 0.0 {
            return Err(Error::config("tau must be positive"));
        }
        if !(0.0..=1.0).contains(&self.teacher_momentum) {
            return Err(Error::config("teacher momentum must lie in [0, 1]"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.ramp_epochs() > self.epochs_step2 {
            return Err(Error::config(
                "lambda_ramp_epochs cannot exceed epochs_step2",
            ));
        }
        if self.transfer_only && self.no_base {
            return Err(Error::config(
                "transfer_only and no_base together disable every loss term",
            ));
        }
        self.weak.validate()?;
        self.strong.validate()?;
        if !(self.weak.noise_std < self.strong.noise_std
            && self.weak.mask_fraction <= self.strong.mask_fraction)
        {
            return Err(Error::config(
                "weak augmentation must be strictly dominated by strong",
            ));
        }
        Ok(())
    }
}

/// One iteration's loss decomposition: `total = supervised + lambda * distill`
/// (with the disabled term at zero under ablation modes).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub distill: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Per-epoch aggregate written to the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub supervised: f64,
    pub distill: f64,
    pub total: f64,
    pub skip_count: usize,
}

/// Training history: per-epoch aggregates plus every iteration's breakdown.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub iterations: Vec<LossBreakdown>,
}

impl TrainLog {
    /// Line-delimited JSON, one epoch record per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec).expect("serializable record"));
            out.push('\n');
        }
        crate::util::atomic_write(path, out.as_bytes())
    }
}

/// Sharpened, stop-gradient distribution: `softmax(logits / tau)`, detached.
pub fn sharpen(logits: &Tensor, tau: f64) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::config("sharpening temperature must be positive"));
    }
    Ok(logits.scale(1.0 / tau).softmax().detach())
}

/// One-hot rows for a label batch.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::contract(format!(
                "label {l} out of range for {n_classes} classes"
            )));
        }
        data[i * n_classes + l] = 1.0;
    }
    Tensor::new(&[labels.len(), n_classes], data)
}

/// Mean cross-entropy between one-hot labels and the student's softmax
/// predictions on a batch.
pub fn supervised_loss(network: &Network, batch: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let n_classes = network.head.n_classes();
    let targets = one_hot(labels, n_classes)?;
    let probs = network.forward(batch)?.softmax();
    let summed = cross_entropy(&targets, &probs)?;
    Ok(summed.scale(1.0 / labels.len() as f64))
}

/// Distillation loss over one unlabeled batch, plus how many samples the
/// hard-threshold mode dropped.
pub struct DistillOutcome {
    pub loss: Tensor,
    pub skipped: usize,
}

/// Consistency distillation: the first augmented view goes to the teacher,
/// the second to the student; the loss is the mean cross-entropy from the
/// sharpened (or hard-thresholded) teacher distribution to the student's
/// softmax prediction. Teacher targets are detached.
pub fn distill_loss(
    pair: &StudentTeacherPair,
    samples: &SampleSet,
    indices: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DistillOutcome> {
    let dim = samples.dim();
    let teacher_spec = cfg.augment_pairing.teacher_spec(cfg);
    let student_spec = cfg.augment_pairing.student_spec(cfg);

    let mut teacher_rows = Vec::with_capacity(indices.len() * dim);
    let mut student_rows = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        let row = samples.row(i);
        teacher_rows.extend(augment(row, teacher_spec, rng));
        student_rows.extend(augment(row, student_spec, rng));
    }
    let teacher_batch = Tensor::new(&[indices.len(), dim], teacher_rows)?;
    let student_batch = Tensor::new(&[indices.len(), dim], student_rows)?;

    let teacher_logits = pair.teacher_distill_logits(&teacher_batch)?;
    let student_probs = pair.student_distill_logits(&student_batch)?.softmax();

    let n_out = *teacher_logits.shape().last().unwrap();
    let (targets, kept, skipped) = match cfg.hard_threshold {
        None => (sharpen(&teacher_logits, cfg.tau)?, indices.len(), 0),
        Some(threshold) => {
            // FixMatch-style pseudo-labels: confidence from the unsharpened
            // teacher softmax; rows below the cutoff become all-zero targets
            // and therefore contribute nothing to the summed cross-entropy.
            let confidences = teacher_logits.softmax();
            let mut data = vec![0.0; indices.len() * n_out];
            let mut kept = 0;
            confidences.with_data(|c| {
                for (r, row) in c.chunks_exact(n_out).enumerate() {
                    let (argmax, max) = row.iter().enumerate().fold(
                        (0, f64::NEG_INFINITY),
                        |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                    );
                    if max >= threshold {
                        data[r * n_out + argmax] = 1.0;
                        kept += 1;
                    }
                }
            });
            let targets = Tensor::new(&[indices.len(), n_out], data)?;
            (targets, kept, indices.len() - kept)
        }
    };

    let summed = cross_entropy(&targets, &student_probs)?;
    let factor = if kept > 0 { 1.0 / kept as f64 } else { 0.0 };
    Ok(DistillOutcome {
        loss: summed.scale(factor),
        skipped,
    })
}

/// The combined training objective for one iteration.
pub struct TotalLoss {
    pub tensor: Tensor,
    pub breakdown: LossBreakdown,
    pub skipped: usize,
}

/// `supervised + lambda * distill`, honoring the ablation modes. Gradients
/// flow only into student parameters.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    pair: &StudentTeacherPair,
    base_batch: &Tensor,
    base_labels: &[usize],
    unlabeled: &SampleSet,
    unlabeled_indices: &[usize],
    lambda: f64,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TotalLoss> {
    if lambda < 0.0 {
        return Err(Error::config("lambda must be nonnegative"));
    }
    if cfg.transfer_only && cfg.no_base {
        return Err(Error::config("every loss term is disabled"));
    }
    if cfg.transfer_only {
        let sup = supervised_loss(pair.student(), base_batch, base_labels)?;
        let value = sup.item();
        return Ok(TotalLoss {
            tensor: sup,
            breakdown: LossBreakdown {
                supervised: value,
                distill: 0.0,
                lambda: 0.0,
                total: value,
            },
            skipped: 0,
        });
    }
    if cfg.no_base {
        let outcome = distill_loss(pair, unlabeled, unlabeled_indices, cfg, rng)?;
        let distill_value = outcome.loss.item();
        let tensor = outcome.loss.scale(lambda);
        let total = tensor.item();
        return Ok(TotalLoss {
            tensor,
            breakdown: LossBreakdown {
                supervised: 0.0,
                distill: distill_value,
                lambda,
                total,
            },
            skipped: outcome.skipped,
        });
    }
    let sup = supervised_loss(pair.student(), base_batch, base_labels)?;
    let outcome = distill_loss(pair, unlabeled, unlabeled_indices, cfg, rng)?;
    let tensor = sup.add(&outcome.loss.scale(lambda))?;
    let breakdown = LossBreakdown {
        supervised: sup.item(),
        distill: outcome.loss.item(),
        lambda,
        total: tensor.item(),
    };
    Ok(TotalLoss {
        tensor,
        breakdown,
        skipped: outcome.skipped,
    })
}

/// Distillation weight ramp: half-cosine from 0 to 1 over `ramp` epochs,
/// constant 1 afterwards.
pub fn lambda_schedule(epoch: usize, ramp: usize) -> f64 {
    if ramp == 0 {
        return 1.0;
    }
    let t = (epoch as f64 / ramp as f64).min(1.0);
    0.5 * (1.0 - (std::f64::consts::PI * t).cos())
}

/// Cosine learning-rate decay from `lr0` at epoch 0 to 0 at `total`.
pub fn cosine_lr(epoch: usize, lr0: f64, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos())
}

/// Step-1 pretraining: supervised loss only, SGD with cosine decay over
/// `cfg.epochs_step1`, minibatches shuffled by the labeled-stream generator.
pub fn train_base(network: &Network, base: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainLog> {
    train_base_with(network, base, cfg, |_| Ok(()))
}

/// [`train_base`] with a per-epoch observer (checkpointing, progress).
pub fn train_base_with(
    network: &Network,
    base: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut opt = Sgd::new(network.params(), cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let mut shuffle_rng = rng_for(cfg.seed, stream::LABELED_SHUFFLE);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs_step1 {
        let lr = cosine_lr(epoch, cfg.lr, cfg.epochs_step1);
        opt.set_lr(lr);
        let batches = shuffled_batches(base.len(), cfg.batch_size, &mut shuffle_rng);
        let mut epoch_sum = 0.0;
        let mut n_iter = 0;
        for batch in &batches {
            let x = base.samples().gather_tensor(batch);
            let y: Vec<usize> = batch.iter().map(|&i| base.labels()[i]).collect();
            let loss = supervised_loss(network, &x, &y)?;
            let value = loss.item();
            loss.backward()?;
            opt.step()?;
            log.iterations.push(LossBreakdown {
                supervised: value,
                distill: 0.0,
                lambda: 0.0,
                total: value,
            });
            epoch_sum += value;
            n_iter += 1;
        }
        let record = EpochRecord {
            epoch,
            lr,
            lambda: 0.0,
            supervised: epoch_sum / n_iter as f64,
            distill: 0.0,
            total: epoch_sum / n_iter as f64,
            skip_count: 0,
        };
        on_epoch(&record)?;
        log.epochs.push(record);
    }
    Ok(log)
}

/// Step-2 joint training. Each epoch is one pass over the labeled stream;
/// the unlabeled stream cycles with reshuffling and matches the labeled
/// batch size. Per iteration: total loss, backward, student SGD step, then
/// the teacher EMA update, in that order.
pub fn train_joint(
    pair: &StudentTeacherPair,
    base: &LabeledDataset,
    unlabeled: &SampleSet,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_joint_with(pair, base, unlabeled, cfg, |_| Ok(()))
}

/// [`train_joint`] with a per-epoch observer (checkpointing, progress).
pub fn train_joint_with(
    pair: &StudentTeacherPair,
    base: &LabeledDataset,
    unlabeled: &SampleSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut opt = Sgd::new(pair.student_params(), cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let mut shuffle_rng = rng_for(cfg.seed, stream::LABELED_SHUFFLE);
    let mut unlabeled_sampler =
        CyclingSampler::new(unlabeled.len(), rng_for(cfg.seed, stream::UNLABELED_SHUFFLE));
    let mut augment_rng = rng_for(cfg.seed, stream::AUGMENT);
    let ramp = cfg.ramp_epochs();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs_step2 {
        let lambda = if cfg.transfer_only {
            0.0
        } else {
            lambda_schedule(epoch, ramp)
        };
        let lr = cosine_lr(epoch, cfg.lr, cfg.epochs_step2);
        opt.set_lr(lr);
        let batches = shuffled_batches(base.len(), cfg.batch_size, &mut shuffle_rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut skip_count = 0;
        let mut n_iter = 0;
        for batch in &batches {
            let x = base.samples().gather_tensor(batch);
            let y: Vec<usize> = batch.iter().map(|&i| base.labels()[i]).collect();
            let u_indices = if cfg.transfer_only {
                Vec::new()
            } else {
                unlabeled_sampler.next_batch(batch.len())
            };
            let out = total_loss(
                pair,
                &x,
                &y,
                unlabeled,
                &u_indices,
                lambda,
                cfg,
                &mut augment_rng,
            )?;
            out.tensor.backward()?;
            opt.step()?;
            pair.ema_update();
            sums.0 += out.breakdown.supervised;
            sums.1 += out.breakdown.distill;
            sums.2 += out.breakdown.total;
            skip_count += out.skipped;
            log.iterations.push(out.breakdown);
            n_iter += 1;
        }
        let n = n_iter as f64;
        let record = EpochRecord {
            epoch,
            lr,
            lambda,
            supervised: sums.0 / n,
            distill: sums.1 / n,
            total: sums.2 / n,
            skip_count,
        };
        on_epoch(&record)?;
        log.epochs.push(record);
    }
    Ok(log)
}
