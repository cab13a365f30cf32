use crate::error::{Error, Result};
use crate::linalg::{argmax, softmax, Matrix};
use crate::ClassId;

/// `beta z1 + (1 - beta) z2` for latents of two different classes.
pub fn mix_pseudo_unseen(
    z1: &[f64],
    class1: ClassId,
    z2: &[f64],
    class2: ClassId,
    beta: f64,
) -> Result<Vec<f64>> {
    if class1 == class2 {
        return Err(Error::Input(format!("mixing pair is same-class ({class1})")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Input(format!("mixing ratio {beta} outside [0, 1]")));
    }
    if z1.len() != z2.len() {
        return Err(Error::Input("mixing latents differ in dimension".into()));
    }
    Ok(z1
        .iter()
        .zip(z2)
        .map(|(a, b)| beta * a + (1.0 - beta) * b)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnseenGrad {
    pub value: f64,
    pub dlogits: Matrix,
    /// Per-row `(hinge active, argmax)`, the piecewise choices of this evaluation.
    pub branches: Vec<(bool, usize)>,
}

/// Mean over rows of `max(0, max softmax - tau)` with its logit gradient.
pub fn loss_unseen_with_grad(logits: &Matrix, tau: f64) -> UnseenGrad {
    let n = logits.rows();
    let mut dlogits = Matrix::zeros(n, logits.cols());
    let mut branches = Vec::with_capacity(n);
    if n == 0 {
        return UnseenGrad {
            value: 0.0,
            dlogits,
            branches,
        };
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    for (i, row) in logits.iter_rows().enumerate() {
        let p = softmax(row);
        let m = argmax(&p);
        let excess = p[m] - tau;
        let active = excess > 0.0;
        branches.push((active, m));
        if active {
            value += excess;
            // d p_m / d u_j = p_m (delta_mj - p_j)
            let g = dlogits.row_mut(i);
            for (j, gj) in g.iter_mut().enumerate() {
                let delta = if j == m { 1.0 } else { 0.0 };
                *gj = inv * p[m] * (delta - p[j]);
            }
        }
    }
    UnseenGrad {
        value: value * inv,
        dlogits,
        branches,
    }
}

pub fn loss_unseen(logits: &Matrix, tau: f64) -> f64 {
    loss_unseen_with_grad(logits, tau).value
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixing_endpoints_and_midpoint() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_eq!(mix_pseudo_unseen(&a, 0, &b, 1, 1.0).unwrap(), a);
        assert_eq!(mix_pseudo_unseen(&a, 0, &b, 1, 0.0).unwrap(), b);
        assert_eq!(mix_pseudo_unseen(&a, 0, &b, 1, 0.5).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn same_class_pair_is_rejected() {
        assert!(mix_pseudo_unseen(&[1.0], 2, &[0.0], 2, 0.5).is_err());
    }

    #[test]
    fn uniform_logits_are_below_threshold() {
        assert_eq!(loss_unseen(&Matrix::zeros(4, 3), 0.65), 0.0);
    }

    #[test]
    fn confident_sample_pays_excess() {
        // two classes with softmax max exactly 0.9
        let l = (0.9f64 / 0.1).ln();
        let logits = Matrix::row_vector(&[l, 0.0]);
        assert!((loss_unseen(&logits, 0.65) - 0.25).abs() < 1e-12);
    }
}
