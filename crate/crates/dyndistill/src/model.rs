//! Encoder, classifier head, and the student/teacher pairing.
//!
//! The encoder is a multilayer perceptron mapping `input_dim` to a
//! `d`-dimensional embedding with rectifier activations between layers and
//! none after the final one. The classifier head is a single linear map from
//! the embedding to base-class logits. A `StudentTeacherPair` holds two
//! architecturally identical networks; the teacher is never optimized and
//! changes only through the momentum update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{rng_for, stream};
use crate::tensor::Tensor;

/// Encoder layout: widths after the input layer, the last one being the
/// embedding dimension `d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layer_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layer_widths: vec![256, 128, 64],
        }
    }
}

impl ModelConfig {
    /// Full width list `[input_dim, hidden..., d]`.
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.layer_widths.len() + 1);
        w.push(input_dim);
        w.extend_from_slice(&self.layer_widths);
        w
    }
}

/// One affine layer `x . weight + bias`, weight stored `[in x out]`.
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// Scaled-uniform initialization: weights from `U(-a, a)` with
    /// `a = 1/sqrt(in_dim)`, biases zero.
    fn init(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Linear {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Linear {
            weight: Tensor::param(&[in_dim, out_dim], w).expect("valid init shape"),
            bias: Tensor::param(&[out_dim], vec![0.0; out_dim]).expect("valid init shape"),
        }
    }

    /// Build a layer from explicit values (trainable).
    pub fn from_values(in_dim: usize, out_dim: usize, w: Vec<f64>, b: Vec<f64>) -> Result<Linear> {
        Ok(Linear {
            weight: Tensor::param(&[in_dim, out_dim], w)?,
            bias: Tensor::param(&[out_dim], b)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn detached_clone(&self) -> Linear {
        Linear {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
        }
    }
}

/// The embedding network `f`.
pub struct Encoder {
    layers: Vec<Linear>,
}

impl Encoder {
    pub fn from_layers(layers: Vec<Linear>) -> Result<Encoder> {
        if layers.is_empty() {
            return Err(Error::config("encoder needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config("encoder layer widths do not chain"));
            }
        }
        Ok(Encoder { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Embedding dimension `d`.
    pub fn embed_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// `[input_dim, hidden..., d]`
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.out_dim()));
        w
    }

    /// Forward to the embedding. Rectifier between layers, none after the
    /// final layer.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let batch_width = *x.shape().last().unwrap_or(&0);
        if batch_width != self.input_dim() {
            return Err(Error::shape(format!(
                "batch width {} does not match encoder input dim {}",
                batch_width,
                self.input_dim()
            )));
        }
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&h.relu())?;
        }
        Ok(h)
    }

    /// Value-only embeddings for evaluation: the result is detached, so no
    /// gradients ever flow back from downstream consumers.
    pub fn extract_features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.embed(x)?.detach())
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn detached_clone(&self) -> Encoder {
        Encoder {
            layers: self.layers.iter().map(|l| l.detached_clone()).collect(),
        }
    }
}

/// The linear head `g` predicting `n_classes` logits from embeddings.
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn forward(&self, embedding: &Tensor) -> Result<Tensor> {
        self.linear.forward(embedding)
    }

    pub fn n_classes(&self) -> usize {
        self.linear.out_dim()
    }
}

/// Encoder plus classifier head.
pub struct Network {
    pub encoder: Encoder,
    pub head: ClassifierHead,
}

impl Network {
    /// Class logits `g(f(batch))`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.head.forward(&self.encoder.embed(batch)?)
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.head.linear.params());
        p
    }

    /// Stable `(path, tensor)` listing used by checkpoints.
    pub fn param_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.layer{i}.weight"), layer.weight.clone()));
            out.push((format!("encoder.layer{i}.bias"), layer.bias.clone()));
        }
        out.push(("head.weight".into(), self.head.linear.weight.clone()));
        out.push(("head.bias".into(), self.head.linear.bias.clone()));
        out
    }

    pub fn detached_clone(&self) -> Network {
        Network {
            encoder: self.encoder.detached_clone(),
            head: ClassifierHead {
                linear: self.head.linear.detached_clone(),
            },
        }
    }
}

/// Seeded network construction. `widths` spells the encoder as
/// `[input_dim, hidden..., d]`; the head maps `d` to `n_classes`.
pub fn init_network(seed: u64, widths: &[usize], n_classes: usize) -> Result<Network> {
    if widths.len() < 2 {
        return Err(Error::config(
            "widths must list at least [input_dim, embed_dim]",
        ));
    }
    if widths.iter().any(|&w| w == 0) || n_classes == 0 {
        return Err(Error::config("layer widths and class count must be positive"));
    }
    let mut rng = rng_for(seed, stream::INIT);
    let layers = widths
        .windows(2)
        .map(|w| Linear::init(&mut rng, w[0], w[1]))
        .collect();
    let head = ClassifierHead {
        linear: Linear::init(&mut rng, widths[widths.len() - 1], n_classes),
    };
    Ok(Network {
        encoder: Encoder::from_layers(layers)?,
        head,
    })
}

/// Student and teacher networks with momentum synchronization
/// `theta_t <- m * theta_t + (1 - m) * theta_s`.
pub struct StudentTeacherPair {
    student: Network,
    teacher: Network,
    student_distill_head: Option<Linear>,
    teacher_distill_head: Option<Linear>,
    momentum: f64,
}

impl StudentTeacherPair {
    /// Pair with the shared classifier head as the distillation projection.
    /// The teacher starts as an exact copy of the student.
    pub fn new(student: Network, momentum: f64) -> Result<StudentTeacherPair> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config("teacher momentum must lie in [0, 1]"));
        }
        let teacher = student.detached_clone();
        Ok(StudentTeacherPair {
            student,
            teacher,
            student_distill_head: None,
            teacher_distill_head: None,
            momentum,
        })
    }

    /// Pair two existing networks (for example from a checkpoint). The
    /// teacher is detached so it can never receive gradients; architectures
    /// must match exactly.
    pub fn from_networks(
        student: Network,
        teacher: Network,
        momentum: f64,
    ) -> Result<StudentTeacherPair> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config("teacher momentum must lie in [0, 1]"));
        }
        if student.encoder.widths() != teacher.encoder.widths()
            || student.head.n_classes() != teacher.head.n_classes()
        {
            return Err(Error::config(
                "student and teacher architectures must be identical",
            ));
        }
        Ok(StudentTeacherPair {
            student,
            teacher: teacher.detached_clone(),
            student_distill_head: None,
            teacher_distill_head: None,
            momentum,
        })
    }

    /// Pair with a separate randomly initialized distillation projection
    /// instead of the shared classifier head.
    pub fn with_separate_distill_head(
        student: Network,
        momentum: f64,
        head_seed: u64,
    ) -> Result<StudentTeacherPair> {
        let mut pair = Self::new(student, momentum)?;
        let mut rng = rng_for(head_seed, stream::INIT ^ 0xD157);
        let d = pair.student.encoder.embed_dim();
        let n_out = pair.student.head.n_classes();
        let head = Linear::init(&mut rng, d, n_out);
        pair.teacher_distill_head = Some(head.detached_clone());
        pair.student_distill_head = Some(head);
        Ok(pair)
    }

    pub fn student(&self) -> &Network {
        &self.student
    }

    pub fn teacher(&self) -> &Network {
        &self.teacher
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn has_separate_distill_head(&self) -> bool {
        self.student_distill_head.is_some()
    }

    /// Parameters the optimizer may touch: the student side only.
    pub fn student_params(&self) -> Vec<Tensor> {
        let mut p = self.student.params();
        if let Some(h) = &self.student_distill_head {
            p.extend(h.params());
        }
        p
    }

    pub fn teacher_params(&self) -> Vec<Tensor> {
        let mut p = self.teacher.params();
        if let Some(h) = &self.teacher_distill_head {
            p.extend(h.params());
        }
        p
    }

    /// Distillation logits from the student: shared classifier head unless a
    /// separate projection was configured (in which case the projection is
    /// applied to the embedding instead).
    pub fn student_distill_logits(&self, batch: &Tensor) -> Result<Tensor> {
        match &self.student_distill_head {
            None => self.student.forward(batch),
            Some(h) => h.forward(&self.student.encoder.embed(batch)?),
        }
    }

    pub fn teacher_distill_logits(&self, batch: &Tensor) -> Result<Tensor> {
        match &self.teacher_distill_head {
            None => self.teacher.forward(batch),
            Some(h) => h.forward(&self.teacher.encoder.embed(batch)?),
        }
    }

    /// `theta_t <- m * theta_t + (1 - m) * theta_s` over the encoder, the
    /// head, and the distillation projection when present.
    pub fn ema_update(&self) {
        let m = self.momentum;
        for (t, s) in self.teacher_params().iter().zip(self.student_params()) {
            let sv = s.data();
            let mut tv = t.data();
            for (tx, sx) in tv.iter_mut().zip(&sv) {
                *tx = m * *tx + (1.0 - m) * sx;
            }
            t.set_data(&tv);
        }
    }

    /// Checkpoint listing with `student.` / `teacher.` prefixes.
    pub fn param_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.student.param_entries() {
            out.push((format!("student.{name}"), t));
        }
        if let Some(h) = &self.student_distill_head {
            out.push(("student.distill_head.weight".into(), h.weight.clone()));
            out.push(("student.distill_head.bias".into(), h.bias.clone()));
        }
        for (name, t) in self.teacher.param_entries() {
            out.push((format!("teacher.{name}"), t));
        }
        if let Some(h) = &self.teacher_distill_head {
            out.push(("teacher.distill_head.weight".into(), h.weight.clone()));
            out.push(("teacher.distill_head.bias".into(), h.bias.clone()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_network(7, &[4, 8, 3], 5).unwrap();
        let b = init_network(7, &[4, 8, 3], 5).unwrap();
        let c = init_network(8, &[4, 8, 3], 5).unwrap();
        for ((pa, pb), pc) in a.params().iter().zip(b.params()).zip(c.params()) {
            assert_eq!(pa.data(), pb.data());
            if pa.numel() > 1 {
                // weights differ across seeds; zero biases are equal
                let differs = pa.data() != pc.data();
                let is_bias = pa.shape().len() == 1;
                assert!(differs || is_bias);
            }
        }
    }

    #[test]
    fn init_rejects_bad_widths() {
        assert!(matches!(
            init_network(1, &[], 5),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            init_network(1, &[4], 5),
            Err(Error::Config(_))
        ));
        assert!(init_network(1, &[4, 0], 5).is_err());
    }

    #[test]
    fn init_weight_std_matches_uniform_theory() {
        // U(-a, a) has std a/sqrt(3); check a 10k-parameter layer within 10%.
        let net = init_network(3, &[100, 100], 2).unwrap();
        let w = net.encoder.layers()[0].weight().data();
        assert_eq!(w.len(), 10_000);
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let theory = (1.0 / 100f64.sqrt()) / 3f64.sqrt();
        let ratio = var.sqrt() / theory;
        assert!((0.9..1.1).contains(&ratio), "std ratio {ratio}");
    }

    #[test]
    fn zero_network_gives_uniform_softmax() {
        let layers = vec![Linear::from_values(3, 4, vec![0.0; 12], vec![0.0; 4]).unwrap()];
        let net = Network {
            encoder: Encoder::from_layers(layers).unwrap(),
            head: ClassifierHead {
                linear: Linear::from_values(4, 5, vec![0.0; 20], vec![0.0; 5]).unwrap(),
            },
        };
        let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap();
        let logits = net.forward(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let probs = logits.softmax();
        for p in probs.data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_layer_reproduces_input() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let enc =
            Encoder::from_layers(vec![Linear::from_values(3, 3, w, vec![0.0; 3]).unwrap()])
                .unwrap();
        let x = Tensor::new(&[1, 3], vec![-1.5, 2.0, 0.25]).unwrap();
        assert_eq!(enc.embed(&x).unwrap().data(), vec![-1.5, 2.0, 0.25]);
    }

    #[test]
    fn two_layer_forward_matches_hand_arithmetic() {
        // Independent oracle: plain nested-loop matrix arithmetic.
        let net = init_network(11, &[3, 4, 2], 3).unwrap();
        let x = vec![0.3, -1.2, 0.7, 0.9, 0.1, -0.4];
        let batch = Tensor::new(&[2, 3], x.clone()).unwrap();
        let got = net.forward(&batch).unwrap().data();

        let dims = [3usize, 4, 2, 3];
        let mut h = x;
        let mut layers: Vec<(Vec<f64>, Vec<f64>)> = net
            .encoder
            .layers()
            .iter()
            .map(|l| (l.weight().data(), l.bias().data()))
            .collect();
        layers.push((
            net.head.linear.weight().data(),
            net.head.linear.bias().data(),
        ));
        let n_layers = layers.len();
        for (li, (w, b)) in layers.iter().enumerate() {
            let (ind, outd) = (dims[li], dims[li + 1]);
            let rows = h.len() / ind;
            // relu applies between encoder layers only, not after the
            // embedding and not after the head
            let rectify = li + 1 < n_layers - 1;
            let mut next = vec![0.0; rows * outd];
            for r in 0..rows {
                for j in 0..outd {
                    let mut acc = b[j];
                    for i in 0..ind {
                        acc += h[r * ind + i] * w[i * outd + j];
                    }
                    next[r * outd + j] = if rectify { acc.max(0.0) } else { acc };
                }
            }
            h = next;
        }
        assert!(max_abs_diff(&got, &h) < 1e-12);
    }

    #[test]
    fn teacher_equals_student_after_init() {
        let net = init_network(5, &[4, 6, 3], 4).unwrap();
        let pair = StudentTeacherPair::new(net, 0.99).unwrap();
        for (s, t) in pair.student_params().iter().zip(pair.teacher_params()) {
            assert_eq!(s.data(), t.data());
            assert!(!t.requires_grad());
        }
    }

    #[test]
    fn ema_endpoints() {
        let make = || {
            let net = init_network(5, &[2, 2], 2).unwrap();
            StudentTeacherPair::new(net, 0.0).unwrap()
        };

        // m = 0: teacher follows the student exactly.
        let pair = make();
        for p in pair.student_params() {
            let bumped: Vec<f64> = p.data().iter().map(|v| v + 1.0).collect();
            p.set_data(&bumped);
        }
        pair.ema_update();
        for (s, t) in pair.student_params().iter().zip(pair.teacher_params()) {
            assert_eq!(s.data(), t.data());
        }

        // m = 1: fixed teacher.
        let net = init_network(5, &[2, 2], 2).unwrap();
        let pair = StudentTeacherPair::new(net, 1.0).unwrap();
        let before: Vec<Vec<f64>> = pair.teacher_params().iter().map(|t| t.data()).collect();
        for p in pair.student_params() {
            let bumped: Vec<f64> = p.data().iter().map(|v| v + 1.0).collect();
            p.set_data(&bumped);
        }
        pair.ema_update();
        for (t, b) in pair.teacher_params().iter().zip(&before) {
            assert_eq!(&t.data(), b);
        }
    }

    #[test]
    fn ema_single_step_arithmetic() {
        // theta_t = 0.99 * 1.0 + 0.01 * 0.0
        let student = Network {
            encoder: Encoder::from_layers(vec![
                Linear::from_values(1, 1, vec![0.0], vec![0.0]).unwrap()
            ])
            .unwrap(),
            head: ClassifierHead {
                linear: Linear::from_values(1, 1, vec![0.0], vec![0.0]).unwrap(),
            },
        };
        let pair = StudentTeacherPair::new(student, 0.99).unwrap();
        for t in pair.teacher_params() {
            t.set_data(&vec![1.0; t.numel()]);
        }
        pair.ema_update();
        for t in pair.teacher_params() {
            assert!((t.data()[0] - 0.99).abs() < 1e-15);
        }
    }

    #[test]
    fn ema_closed_form_with_frozen_student() {
        for &m in &[0.0, 0.5, 0.99, 1.0] {
            let net = init_network(9, &[3, 4, 2], 3).unwrap();
            let pair = StudentTeacherPair::new(net, m).unwrap();
            // Freeze a synthetic gap: teacher at 1, student at its init.
            for t in pair.teacher_params() {
                t.set_data(&vec![1.0; t.numel()]);
            }
            let theta0 = 1.0;
            let k = 17;
            for _ in 0..k {
                pair.ema_update();
            }
            let decay = m.powi(k);
            for (t, s) in pair.teacher_params().iter().zip(pair.student_params()) {
                for (tv, sv) in t.data().iter().zip(s.data()) {
                    let expect = decay * theta0 + (1.0 - decay) * sv;
                    assert!((tv - expect).abs() < 1e-10, "m={m}: {tv} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn teacher_forward_builds_no_gradient() {
        let net = init_network(13, &[3, 4, 2], 3).unwrap();
        let pair = StudentTeacherPair::new(net, 0.99).unwrap();
        let x = Tensor::new(&[2, 3], vec![0.1; 6]).unwrap();
        let logits = pair.teacher().forward(&x).unwrap();
        // No input requires grad, so the loss has no recorded graph and
        // backward is a no-op on teacher parameters.
        logits.softmax().mean().backward().unwrap();
        for t in pair.teacher_params() {
            assert!(t.grad().is_none());
        }
    }

    #[test]
    fn shared_distill_head_is_pointer_identical_to_classifier() {
        let net = init_network(21, &[3, 4, 2], 3).unwrap();
        let head_weight_id = net.head.linear.weight().node_id();
        let pair = StudentTeacherPair::new(net, 0.99).unwrap();
        assert!(!pair.has_separate_distill_head());
        let x = Tensor::new(&[1, 3], vec![0.5, -0.5, 1.0]).unwrap();
        let via_distill = pair.student_distill_logits(&x).unwrap();
        let via_forward = pair.student().forward(&x).unwrap();
        assert_eq!(via_distill.data(), via_forward.data());
        assert_eq!(pair.student().head.linear.weight().node_id(), head_weight_id);
    }

    #[test]
    fn separate_distill_head_differs_and_is_ema_tracked() {
        let net = init_network(21, &[3, 4, 2], 3).unwrap();
        let pair = StudentTeacherPair::with_separate_distill_head(net, 0.5, 99).unwrap();
        assert!(pair.has_separate_distill_head());
        let x = Tensor::new(&[1, 3], vec![0.5, -0.5, 1.0]).unwrap();
        let via_distill = pair.student_distill_logits(&x).unwrap();
        let via_forward = pair.student().forward(&x).unwrap();
        assert_ne!(via_distill.data(), via_forward.data());
        // 2 extra tensors on each side, synchronized by EMA.
        assert_eq!(pair.student_params().len(), pair.teacher_params().len());
        for (s, t) in pair.student_params().iter().zip(pair.teacher_params()) {
            assert_eq!(s.data(), t.data());
        }
    }

    #[test]
    fn extract_features_is_pure_and_batch_consistent() {
        let net = init_network(31, &[4, 5, 3], 2).unwrap();
        let batch = Tensor::new(&[3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let f1 = net.encoder.extract_features(&batch).unwrap();
        let f2 = net.encoder.extract_features(&batch).unwrap();
        assert_eq!(f1.data(), f2.data());
        assert!(!f1.requires_grad());

        // Row 1 alone equals row 1 of the batched extraction.
        let single = Tensor::new(&[1, 4], batch.data()[4..8].to_vec()).unwrap();
        let fs = net.encoder.extract_features(&single).unwrap();
        assert_eq!(fs.data(), f1.data()[3..6].to_vec());

        // Zero encoder maps everything to zero.
        let zero = Encoder::from_layers(vec![
            Linear::from_values(4, 2, vec![0.0; 8], vec![0.0; 2]).unwrap(),
        ])
        .unwrap();
        assert!(zero
            .extract_features(&batch)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
