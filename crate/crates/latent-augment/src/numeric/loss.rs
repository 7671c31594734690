//! Classification and regression losses with their logit/prediction gradients.

use crate::error::{Error, Result};
use crate::numeric::matrix::Matrix;

/// Row-wise softmax, numerically stabilized by subtracting the row max.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross entropy over the batch plus the gradient with respect to the
/// logits: `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[u32]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    let w = 1.0 / n as f64;
    softmax_cross_entropy_weighted(logits, labels, &vec![w; n])
}

/// Weighted cross entropy: `loss = sum_i w_i * ce_i`, gradient row i is
/// `w_i * (softmax_i - onehot_i)`. The plain mean is the `w_i = 1/n` case.
pub fn softmax_cross_entropy_weighted(
    logits: &Matrix,
    labels: &[u32],
    weights: &[f64],
) -> Result<(f64, Matrix)> {
    let (n, k) = (logits.rows(), logits.cols());
    if labels.len() != n || weights.len() != n {
        return Err(Error::Shape(format!(
            "{n} logit rows vs {} labels / {} weights",
            labels.len(),
            weights.len()
        )));
    }
    for &label in labels {
        if label as usize >= k {
            return Err(Error::Config(format!(
                "label {label} out of range for {k} classes"
            )));
        }
    }
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for i in 0..n {
        let y = labels[i] as usize;
        // Clamp true zeros away from ln(0), but let NaN through so a
        // diverged model is detected instead of silently masked.
        let p = grad.get(i, y);
        let p = if p < f64::MIN_POSITIVE {
            f64::MIN_POSITIVE
        } else {
            p
        };
        loss -= weights[i] * p.ln();
        let row = grad.row_mut(i);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= weights[i];
        }
    }
    Ok((loss, grad))
}

/// Mean squared error over all entries and its gradient
/// `2 (pred - target) / n_entries`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::Shape(format!(
            "mse {}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let n = (pred.rows() * pred.cols()) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let diff = p - t;
        loss += diff * diff;
        *g = 2.0 * diff / n;
    }
    Ok((loss / n, grad))
}
