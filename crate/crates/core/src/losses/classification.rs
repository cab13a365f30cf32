use crate::diffcore::{LinearClassifier, ProjectionHead};
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, softmax, Matrix};
use crate::ClassId;

/// Mean cross-entropy (log-sum-exp form) and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[ClassId]) -> Result<(f64, Matrix)> {
    if logits.rows() == 0 {
        return Err(Error::Input("cross-entropy over an empty batch".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::Input(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let c = logits.cols();
    let n = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), c);
    for (i, (row, &y)) in logits.iter_rows().zip(labels).enumerate() {
        if y >= c {
            return Err(Error::Input(format!("label {y} outside {c} known classes")));
        }
        loss += log_sum_exp(row) - row[y];
        let g = grad.row_mut(i);
        for (gj, pj) in g.iter_mut().zip(softmax(row)) {
            *gj = pj / n;
        }
        g[y] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

pub fn loss_cls(logits: &Matrix, labels: &[ClassId]) -> Result<f64> {
    cross_entropy(logits, labels).map(|(l, _)| l)
}

/// Replay cross-entropy of stored features re-encoded through the current
/// head. An empty replay batch contributes nothing.
pub fn loss_replay(
    features: &Matrix,
    labels: &[ClassId],
    head: &ProjectionHead,
    clf: &LinearClassifier,
) -> Result<f64> {
    if features.rows() == 0 {
        return Ok(0.0);
    }
    let z = head.project(features)?;
    loss_cls(&clf.forward(&z)?, labels)
}
