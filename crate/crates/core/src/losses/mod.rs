//! Loss terms of the training objective and the pseudo-unseen mixing operator.

mod classification;
mod hierarchical;
mod objective;
mod unseen;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use classification::{cross_entropy, loss_cls, loss_replay};
pub use hierarchical::{loss_coarse, loss_coarse_with_grad, loss_fine, loss_fine_with_grad, AlignmentGrad};
pub use objective::{MixPair, Objective, StepInputs, TermWeights};
pub use unseen::{loss_unseen, loss_unseen_with_grad, mix_pseudo_unseen, UnseenGrad};

/// Weights of the regularizers relative to the classification term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Fine-grained anchor alignment + orthogonality.
    pub alpha1: f64,
    /// Family-level anchor alignment + orthogonality.
    pub alpha2: f64,
    /// Pseudo-unseen confidence hinge.
    pub alpha3: f64,
    /// Replay cross-entropy.
    pub alpha4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 0.2,
            alpha2: 0.5,
            alpha3: 0.5,
            alpha4: 1.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        alpha1: 0.0,
        alpha2: 0.0,
        alpha3: 0.0,
        alpha4: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            alpha1: self.alpha1 * s,
            alpha2: self.alpha2 * s,
            alpha3: self.alpha3 * s,
            alpha4: self.alpha4 * s,
        }
    }
}

/// Unweighted loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub cls: f64,
    pub l1: f64,
    pub l2: f64,
    pub lu: f64,
    pub replay: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub l1: f64,
    pub l2: f64,
    pub lu: f64,
    pub replay: f64,
    pub total: f64,
}

/// `cls + a1 l1 + a2 l2 + a3 lu + a4 replay`.
pub fn total_loss(parts: LossParts, weights: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [
        ("cls", parts.cls),
        ("l1", parts.l1),
        ("l2", parts.l2),
        ("lu", parts.lu),
        ("replay", parts.replay),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss term `{name}` is {v}")));
        }
    }
    let total = parts.cls
        + weights.alpha1 * parts.l1
        + weights.alpha2 * parts.l2
        + weights.alpha3 * parts.lu
        + weights.alpha4 * parts.replay;
    Ok(LossBreakdown {
        cls: parts.cls,
        l1: parts.l1,
        l2: parts.l2,
        lu: parts.lu,
        replay: parts.replay,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones() -> LossParts {
        LossParts {
            cls: 1.0,
            l1: 1.0,
            l2: 1.0,
            lu: 1.0,
            replay: 1.0,
        }
    }

    #[test]
    fn zero_parts_give_zero_total() {
        let b = total_loss(LossParts::default(), &LossWeights::default()).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn unit_parts_with_default_weights() {
        let b = total_loss(ones(), &LossWeights::default()).unwrap();
        assert!((b.total - 3.2).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_leave_classification_only() {
        let b = total_loss(ones(), &LossWeights::ZERO).unwrap();
        assert_eq!(b.total, 1.0);
    }

    #[test]
    fn non_finite_term_is_named() {
        let mut p = ones();
        p.lu = f64::NAN;
        let err = total_loss(p, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("`lu`"));
    }

    #[test]
    fn negative_weight_is_rejected() {
        let w = LossWeights {
            alpha2: -0.1,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
