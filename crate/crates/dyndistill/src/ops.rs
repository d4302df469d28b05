//! Differentiable primitives: matmul, add (with bias broadcast), scale,
//! relu, mean, sum, softmax, cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped at this floor before any log, so sharpened
/// teacher targets that underflow to zero stay finite.
pub const LOG_EPS: f64 = 1e-12;

/// Backward rule attached to an op output. Holds handles to the inputs plus
/// whatever forward values the reverse pass needs.
#[derive(Clone)]
pub(crate) enum GradFn {
    Matmul { a: Tensor, b: Tensor },
    Add { a: Tensor, b: Tensor },
    AddBias { a: Tensor, bias: Tensor },
    Scale { a: Tensor, factor: f64 },
    Relu { a: Tensor },
    Mean { a: Tensor },
    Sum { a: Tensor },
    Softmax { a: Tensor, probs: Vec<f64>, cols: usize },
    CrossEntropy { target: Tensor, pred: Tensor },
}

impl GradFn {
    pub(crate) fn parents(&self) -> Vec<Tensor> {
        match self {
            GradFn::Matmul { a, b } | GradFn::Add { a, b } => vec![a.clone(), b.clone()],
            GradFn::AddBias { a, bias } => vec![a.clone(), bias.clone()],
            GradFn::Scale { a, .. }
            | GradFn::Relu { a }
            | GradFn::Mean { a }
            | GradFn::Sum { a }
            | GradFn::Softmax { a, .. } => vec![a.clone()],
            GradFn::CrossEntropy { target, pred } => vec![target.clone(), pred.clone()],
        }
    }

    pub(crate) fn clone_for_backward(&self) -> GradFn {
        self.clone()
    }

    /// Accumulate `d loss / d parent` into each parent that needs it, given
    /// `grad_out = d loss / d output`.
    pub(crate) fn backward(&self, grad_out: &[f64]) {
        match self {
            GradFn::Matmul { a, b } => {
                let (m, k) = mat_dims(a);
                let n = mat_dims(b).1;
                if a.needs_grad() {
                    let mut da = vec![0.0; m * k];
                    b.with_data(|bd| add_matmul_nt(&mut da, grad_out, bd, m, n, k));
                    a.accumulate_grad(&da);
                }
                if b.needs_grad() {
                    let mut db = vec![0.0; k * n];
                    a.with_data(|ad| add_matmul_tn(&mut db, ad, grad_out, m, k, n));
                    b.accumulate_grad(&db);
                }
            }
            GradFn::Add { a, b } => {
                if a.needs_grad() {
                    a.accumulate_grad(grad_out);
                }
                if b.needs_grad() {
                    b.accumulate_grad(grad_out);
                }
            }
            GradFn::AddBias { a, bias } => {
                if a.needs_grad() {
                    a.accumulate_grad(grad_out);
                }
                if bias.needs_grad() {
                    let n = bias.numel();
                    let mut db = vec![0.0; n];
                    for row in grad_out.chunks_exact(n) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    bias.accumulate_grad(&db);
                }
            }
            GradFn::Scale { a, factor } => {
                if a.needs_grad() {
                    let da: Vec<f64> = grad_out.iter().map(|g| g * factor).collect();
                    a.accumulate_grad(&da);
                }
            }
            GradFn::Relu { a } => {
                if a.needs_grad() {
                    let da: Vec<f64> = a.with_data(|ad| {
                        ad.iter()
                            .zip(grad_out)
                            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                            .collect()
                    });
                    a.accumulate_grad(&da);
                }
            }
            GradFn::Mean { a } => {
                if a.needs_grad() {
                    let scale = grad_out[0] / a.numel() as f64;
                    a.accumulate_grad(&vec![scale; a.numel()]);
                }
            }
            GradFn::Sum { a } => {
                if a.needs_grad() {
                    a.accumulate_grad(&vec![grad_out[0]; a.numel()]);
                }
            }
            GradFn::Softmax { a, probs, cols } => {
                if a.needs_grad() {
                    // Per row: dx_i = p_i * (g_i - sum_j g_j p_j).
                    let mut da = vec![0.0; probs.len()];
                    for ((drow, prow), grow) in da
                        .chunks_exact_mut(*cols)
                        .zip(probs.chunks_exact(*cols))
                        .zip(grad_out.chunks_exact(*cols))
                    {
                        let dot: f64 = grow.iter().zip(prow).map(|(g, p)| g * p).sum();
                        for ((d, &p), &g) in drow.iter_mut().zip(prow).zip(grow) {
                            *d = p * (g - dot);
                        }
                    }
                    a.accumulate_grad(&da);
                }
            }
            GradFn::CrossEntropy { target, pred } => {
                let g0 = grad_out[0];
                if pred.needs_grad() {
                    let dp: Vec<f64> = target.with_data(|t| {
                        pred.with_data(|p| {
                            t.iter()
                                .zip(p)
                                .map(|(&ti, &pi)| -g0 * ti / pi.max(LOG_EPS))
                                .collect()
                        })
                    });
                    pred.accumulate_grad(&dp);
                }
                if target.needs_grad() {
                    let dt: Vec<f64> = pred.with_data(|p| {
                        p.iter().map(|&pi| -g0 * pi.max(LOG_EPS).ln()).collect()
                    });
                    target.accumulate_grad(&dt);
                }
            }
        }
    }
}

fn mat_dims(t: &Tensor) -> (usize, usize) {
    let shape = t.shape();
    debug_assert_eq!(shape.len(), 2);
    (shape[0], shape[1])
}

fn grad_fn_if_needed(inputs: &[&Tensor], f: impl FnOnce() -> GradFn) -> Option<GradFn> {
    if inputs.iter().any(|t| t.needs_grad()) {
        Some(f())
    } else {
        None
    }
}

impl Tensor {
    /// Matrix product `[m x k] . [k x n] -> [m x n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 {
            return Err(Error::shape(format!(
                "matmul needs 2-d operands, got {ls:?} and {rs:?}"
            )));
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        if rs[0] != k {
            return Err(Error::shape(format!(
                "matmul inner dimensions disagree: {ls:?} . {rs:?}"
            )));
        }
        let out = self.with_data(|a| rhs.with_data(|b| matmul_raw(a, b, m, k, n)));
        let grad_fn = grad_fn_if_needed(&[self, rhs], || GradFn::Matmul {
            a: self.clone(),
            b: rhs.clone(),
        });
        Ok(Tensor::from_parts(vec![m, n], out, false, grad_fn))
    }

    /// Elementwise sum. Also accepts a rank-1 bias broadcast over the rows
    /// of a rank-2 tensor.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls == rs {
            let out = self.with_data(|a| {
                rhs.with_data(|b| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>())
            });
            let grad_fn = grad_fn_if_needed(&[self, rhs], || GradFn::Add {
                a: self.clone(),
                b: rhs.clone(),
            });
            return Ok(Tensor::from_parts(ls, out, false, grad_fn));
        }
        if ls.len() == 2 && rs.len() == 1 && rs[0] == ls[1] {
            let n = ls[1];
            let out = self.with_data(|a| {
                rhs.with_data(|b| {
                    let mut v = a.to_vec();
                    for row in v.chunks_exact_mut(n) {
                        for (x, y) in row.iter_mut().zip(b) {
                            *x += y;
                        }
                    }
                    v
                })
            });
            let grad_fn = grad_fn_if_needed(&[self, rhs], || GradFn::AddBias {
                a: self.clone(),
                bias: rhs.clone(),
            });
            return Ok(Tensor::from_parts(ls, out, false, grad_fn));
        }
        Err(Error::shape(format!(
            "add shapes incompatible: {ls:?} vs {rs:?}"
        )))
    }

    /// Multiplication by a constant.
    pub fn scale(&self, factor: f64) -> Tensor {
        let out = self.with_data(|a| a.iter().map(|x| x * factor).collect::<Vec<f64>>());
        let grad_fn = grad_fn_if_needed(&[self], || GradFn::Scale {
            a: self.clone(),
            factor,
        });
        Tensor::from_parts(self.shape(), out, false, grad_fn)
    }

    pub fn relu(&self) -> Tensor {
        let out = self.with_data(|a| a.iter().map(|x| x.max(0.0)).collect::<Vec<f64>>());
        let grad_fn = grad_fn_if_needed(&[self], || GradFn::Relu { a: self.clone() });
        Tensor::from_parts(self.shape(), out, false, grad_fn)
    }

    /// Mean over all entries, as a scalar.
    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        let v = self.with_data(|a| a.iter().sum::<f64>()) / n;
        let grad_fn = grad_fn_if_needed(&[self], || GradFn::Mean { a: self.clone() });
        Tensor::from_parts(vec![], vec![v], false, grad_fn)
    }

    /// Sum over all entries, as a scalar.
    pub fn sum(&self) -> Tensor {
        let v = self.with_data(|a| a.iter().sum::<f64>());
        let grad_fn = grad_fn_if_needed(&[self], || GradFn::Sum { a: self.clone() });
        Tensor::from_parts(vec![], vec![v], false, grad_fn)
    }

    /// Row-wise softmax over the last dimension, stabilized by
    /// max-subtraction so large logits cannot overflow.
    pub fn softmax(&self) -> Tensor {
        let shape = self.shape();
        let cols = shape.last().copied().unwrap_or(1).max(1);
        let out = self.with_data(|a| {
            let mut v = vec![0.0; a.len()];
            for (orow, row) in v.chunks_exact_mut(cols).zip(a.chunks_exact(cols)) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for (o, &x) in orow.iter_mut().zip(row) {
                    *o = (x - max).exp();
                    denom += *o;
                }
                for o in orow.iter_mut() {
                    *o /= denom;
                }
            }
            v
        });
        let grad_fn = grad_fn_if_needed(&[self], || GradFn::Softmax {
            a: self.clone(),
            probs: out.clone(),
            cols,
        });
        Tensor::from_parts(shape, out, false, grad_fn)
    }
}

/// Cross-entropy `H(target, pred) = -sum_i target_i * ln(pred_i)`, summed
/// over every entry, with `pred` clamped below at [`LOG_EPS`]. For a batch
/// of rows this is the per-row cross-entropy summed over the batch; scale by
/// `1/rows` for the mean.
pub fn cross_entropy(target: &Tensor, pred: &Tensor) -> Result<Tensor> {
    if target.shape() != pred.shape() {
        return Err(Error::shape(format!(
            "cross_entropy shapes disagree: {:?} vs {:?}",
            target.shape(),
            pred.shape()
        )));
    }
    let v = target.with_data(|t| {
        pred.with_data(|p| {
            t.iter()
                .zip(p)
                .map(|(&ti, &pi)| -ti * pi.max(LOG_EPS).ln())
                .sum::<f64>()
        })
    });
    let grad_fn = grad_fn_if_needed(&[target, pred], || GradFn::CrossEntropy {
        target: target.clone(),
        pred: pred.clone(),
    });
    Ok(Tensor::from_parts(vec![], vec![v], false, grad_fn))
}

/// `a[m x k] . b[k x n]`, row-major.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `acc[m x k] += g[m x n] . b[k x n]^T`
fn add_matmul_nt(acc: &mut [f64], g: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let arow = &mut acc[i * k..(i + 1) * k];
        for (kk, a) in arow.iter_mut().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            *a += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `acc[k x n] += a[m x k]^T . g[m x n]`
fn add_matmul_tn(acc: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let accrow = &mut acc[kk * n..(kk + 1) * n];
            for (o, &gv) in accrow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&m).unwrap().data(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_dot() {
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), vec![11.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = Tensor::new(&[3], vec![0.0, 0.0, 0.0]).unwrap().softmax();
        for v in p.data() {
            assert_close(v, 1.0 / 3.0, 1e-15);
        }
    }

    #[test]
    fn softmax_large_logits_stable() {
        let p = Tensor::new(&[2], vec![1000.0, 0.0]).unwrap().softmax();
        let d = p.data();
        assert!(d.iter().all(|v| v.is_finite()));
        assert_close(d[0], 1.0, 1e-12);
        assert!(d[1] >= 0.0 && d[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        // Independent evaluation of exp(x_i)/sum for [1,2,3].
        let x = [1.0f64, 2.0, 3.0];
        let denom: f64 = x.iter().map(|v| v.exp()).sum();
        let expected: Vec<f64> = x.iter().map(|v| v.exp() / denom).collect();
        let got = Tensor::new(&[3], x.to_vec()).unwrap().softmax().data();
        for (g, e) in got.iter().zip(&expected) {
            assert_close(*g, *e, 1e-12);
        }
    }

    #[test]
    fn cross_entropy_one_hot_reduces_to_neg_log() {
        let target = Tensor::new(&[3], vec![0.0, 1.0, 0.0]).unwrap();
        let pred = Tensor::new(&[3], vec![0.2, 0.5, 0.3]).unwrap();
        let h = cross_entropy(&target, &pred).unwrap().item();
        assert_close(h, -(0.5f64.ln()), 1e-15);
    }

    #[test]
    fn cross_entropy_self_is_entropy() {
        let p = Tensor::new(&[3], vec![0.2, 0.5, 0.3]).unwrap();
        let h = cross_entropy(&p, &p).unwrap().item();
        assert!(h > 0.0);
        let one_hot = Tensor::new(&[3], vec![0.0, 1.0, 0.0]).unwrap();
        let h0 = cross_entropy(&one_hot, &one_hot).unwrap().item();
        assert_close(h0, 0.0, 1e-15);
    }

    #[test]
    fn cross_entropy_soft_target_matches_direct_formula() {
        // -(0.5 ln 0.25 + 0.5 ln 0.75) evaluated independently.
        let expected = -(0.5 * 0.25f64.ln() + 0.5 * 0.75f64.ln());
        let a = Tensor::new(&[2], vec![0.5, 0.5]).unwrap();
        let b = Tensor::new(&[2], vec![0.25, 0.75]).unwrap();
        assert_close(cross_entropy(&a, &b).unwrap().item(), expected, 1e-15);
    }

    #[test]
    fn cross_entropy_length_mismatch() {
        let a = Tensor::new(&[2], vec![0.5, 0.5]).unwrap();
        let b = Tensor::new(&[3], vec![0.25, 0.5, 0.25]).unwrap();
        assert!(matches!(cross_entropy(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_and_mean_values() {
        let t = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(t.relu().data(), vec![0.0, 0.0, 2.0]);
        let m = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean().item(), 2.5);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let w = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        w.sum().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn detach_blocks_gradient_exactly() {
        let w = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = w.detach().scale(2.0).sum();
        loss.backward().unwrap();
        assert!(w.grad().is_none());

        // Through a mixed graph the detached branch contributes exactly zero.
        let a = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let mixed = a.add(&a.detach()).unwrap().sum();
        mixed.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn matmul_gradient_of_sum_is_ones_times_transpose() {
        // d sum(A.B) / dA = ones . B^T
        let a = Tensor::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        a.matmul(&b).unwrap().sum().backward().unwrap();
        // row sums of B rows: [5+6, 7+8] = [11, 15] repeated per row of A
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
    }

    #[test]
    fn bias_broadcast_add_and_gradient() {
        let a = Tensor::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bias = Tensor::param(&[2], vec![10.0, 20.0]).unwrap();
        let out = a.add(&bias).unwrap();
        assert_eq!(out.data(), vec![11.0, 22.0, 13.0, 24.0]);
        out.sum().backward().unwrap();
        assert_eq!(bias.grad().unwrap(), vec![2.0, 2.0]);
        assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
    }
}
