//! Independent oracles shared by the integration suites. Everything here
//! recomputes expected values through code paths separate from the library
//! implementation: central finite differences for gradients and a direct
//! probability-map evaluation for clustering scores.

use std::collections::HashMap;

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

/// Central finite differences of a scalar function of several flat
/// parameter blocks.
pub fn finite_diff(
    f: &dyn Fn(&[Vec<f64>]) -> f64,
    values: &[Vec<f64>],
    eps: f64,
) -> Vec<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(block, block_values)| {
            (0..block_values.len())
                .map(|i| {
                    let mut plus = values.to_vec();
                    plus[block][i] += eps;
                    let mut minus = values.to_vec();
                    minus[block][i] -= eps;
                    (f(&plus) - f(&minus)) / (2.0 * eps)
                })
                .collect()
        })
        .collect()
}

/// Worst relative disagreement between analytic and finite-difference
/// gradients, with a floor so near-zero gradients compare absolutely.
pub fn max_rel_err(analytic: &[Vec<f64>], fd: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (ab, fb) in analytic.iter().zip(fd) {
        assert_eq!(ab.len(), fb.len(), "gradient block sizes differ");
        for (&a, &f) in ab.iter().zip(fb) {
            let denom = a.abs().max(f.abs()).max(1e-6);
            worst = worst.max((a - f).abs() / denom);
        }
    }
    worst
}

/// Brute-force V-measure: joint distribution assembled pair by pair,
/// conditional entropies evaluated class by class and cluster by cluster.
pub fn brute_force_v_measure(truth: &[usize], pred: &[usize]) -> (f64, f64, f64) {
    assert_eq!(truth.len(), pred.len());
    let n = truth.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut p_t: HashMap<usize, f64> = HashMap::new();
    let mut p_k: HashMap<usize, f64> = HashMap::new();
    for (&t, &k) in truth.iter().zip(pred) {
        *joint.entry((t, k)).or_insert(0.0) += 1.0 / n;
        *p_t.entry(t).or_insert(0.0) += 1.0 / n;
        *p_k.entry(k).or_insert(0.0) += 1.0 / n;
    }
    let entropy = |ps: &HashMap<usize, f64>| -> f64 {
        ps.values().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum()
    };
    let h_t = entropy(&p_t);
    let h_k = entropy(&p_k);

    // H(C|K) = sum_k p(k) * H(C | K = k)
    let mut h_t_given_k = 0.0;
    for (&k, &pk) in &p_k {
        let mut inner = 0.0;
        for (&t, _) in &p_t {
            if let Some(&pj) = joint.get(&(t, k)) {
                let cond = pj / pk;
                if cond > 0.0 {
                    inner += -cond * cond.ln();
                }
            }
        }
        h_t_given_k += pk * inner;
    }
    let mut h_k_given_t = 0.0;
    for (&t, &pt) in &p_t {
        let mut inner = 0.0;
        for (&k, _) in &p_k {
            if let Some(&pj) = joint.get(&(t, k)) {
                let cond = pj / pt;
                if cond > 0.0 {
                    inner += -cond * cond.ln();
                }
            }
        }
        h_k_given_t += pt * inner;
    }

    let hom = if h_t == 0.0 { 1.0 } else { 1.0 - h_t_given_k / h_t };
    let com = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_given_t / h_k };
    let v = if hom + com == 0.0 {
        0.0
    } else {
        2.0 * hom * com / (hom + com)
    };
    (hom, com, v)
}
