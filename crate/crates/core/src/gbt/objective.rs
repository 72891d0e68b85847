//! Multi-class softmax cross-entropy: probabilities, Newton gradients and the
//! loss itself.

use crate::error::{Error, Result};

/// Numerically stable softmax of one margin row.
pub fn softmax(margins: &[f64]) -> Vec<f64> {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = margins.iter().map(|m| (m - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln softmax(margins)[y]`, written as `ln(1 + sum_{k != y} e^(m_k - m_y))`
/// so that near-certain rows keep full relative precision.
fn row_loss(margins: &[f64], y: usize) -> f64 {
    let my = margins[y];
    let max_other = margins
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != y)
        .map(|(_, &m)| m - my)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_other <= 0.0 {
        let s: f64 = margins
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != y)
            .map(|(_, &m)| (m - my).exp())
            .sum();
        s.ln_1p()
    } else {
        // Some other class dominates; factor it out instead.
        let s: f64 = margins
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                if k == y {
                    (-max_other).exp()
                } else {
                    (m - my - max_other).exp()
                }
            })
            .sum();
        max_other + s.ln()
    }
}

fn check_shapes(margins: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<usize> {
    let n = margins.len();
    if labels.len() != n || weights.len() != n {
        return Err(Error::validation(format!(
            "shape mismatch: {n} margin rows, {} labels, {} weights",
            labels.len(),
            weights.len()
        )));
    }
    let k = margins.first().map_or(0, Vec::len);
    if margins.iter().any(|r| r.len() != k) {
        return Err(Error::validation("ragged margin matrix"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::validation(format!("label {bad} out of range for {k} classes")));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::validation("sample weights must be finite and non-negative"));
    }
    Ok(k)
}

/// Per-row, per-class (gradient, hessian) matrices.
pub type GradHess = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Per-row, per-class gradient and diagonal hessian of the weighted softmax
/// cross-entropy with respect to the margins.
///
/// `grad[i][k] = w_i * (p_ik - [y_i == k])`, `hess[i][k] = w_i * p_ik * (1 - p_ik)`.
pub fn softmax_grad_hess(margins: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<GradHess> {
    check_shapes(margins, labels, weights)?;
    let mut grad = Vec::with_capacity(margins.len());
    let mut hess = Vec::with_capacity(margins.len());
    for ((row, &y), &w) in margins.iter().zip(labels).zip(weights) {
        let p = softmax(row);
        grad.push(
            p.iter()
                .enumerate()
                .map(|(k, pk)| w * (pk - if k == y { 1.0 } else { 0.0 }))
                .collect(),
        );
        hess.push(p.iter().map(|pk| w * pk * (1.0 - pk)).collect());
    }
    Ok((grad, hess))
}

/// `sum_i w_i * -ln softmax(margins_i)[y_i]`.
pub fn weighted_cross_entropy(margins: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<f64> {
    check_shapes(margins, labels, weights)?;
    Ok(margins
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((row, &y), &w)| w * row_loss(row, y))
        .sum())
}
