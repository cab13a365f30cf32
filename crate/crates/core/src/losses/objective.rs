use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::classification::cross_entropy;
use super::hierarchical::{loss_coarse_with_grad, loss_fine_with_grad};
use super::unseen::loss_unseen_with_grad;
use super::{total_loss, LossBreakdown, LossParts, LossWeights};
use crate::diffcore::HeadTrace;
use crate::error::{Error, Result};
use crate::hierarchy::{compute_prototypes, PrototypeSet, Taxonomy};
use crate::linalg::{axpy, Matrix};
use crate::model::AttributionModel;
use crate::ClassId;

/// A pseudo-unseen pair: rows of the stacked `[current; replay]` batch and the mixing ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixPair {
    pub first: usize,
    pub second: usize,
    pub beta: f64,
}

/// Weights applied to each term, including the classification term (1 in
/// normal training; isolating a term for gradient checks sets it to 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights {
    pub cls: f64,
    pub loss: LossWeights,
}

impl From<LossWeights> for TermWeights {
    fn from(loss: LossWeights) -> Self {
        Self { cls: 1.0, loss }
    }
}

/// One training step's data.
#[derive(Clone, Copy, Debug)]
pub struct StepInputs<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [ClassId],
    /// Replayed bank features (may have zero rows).
    pub replay_features: &'a Matrix,
    pub replay_labels: &'a [ClassId],
    pub pairs: &'a [MixPair],
    pub taxonomy: &'a Taxonomy,
    pub weights: TermWeights,
    pub tau: f64,
}

struct Trace {
    head: HeadTrace,
    latents: Matrix,
    dlogits: Matrix,
    mixed: Option<(Matrix, Matrix, Vec<MixPair>)>,
    protos: Option<PrototypeSet>,
    d_fine: BTreeMap<usize, Vec<f64>>,
    d_coarse: BTreeMap<usize, Vec<f64>>,
    d_fine_anchors: Option<Matrix>,
    d_coarse_anchors: Option<Matrix>,
}

/// The full training objective. [`Objective::forward`] evaluates every term
/// and records what the backward pass needs; [`Objective::backward`] then
/// accumulates `dL/dtheta` into the model's parameters.
#[derive(Default)]
pub struct Objective {
    trace: Option<Trace>,
    branch: u64,
}

// FNV-1a style mixing of branch decisions
fn fold(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0100_0000_01b3)
}

impl Objective {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fingerprint of the hinge/argmax choices made by the last forward pass.
    pub fn branch(&self) -> u64 {
        self.branch
    }

    pub fn forward(&mut self, model: &AttributionModel, inputs: &StepInputs<'_>) -> Result<LossBreakdown> {
        self.trace = None;
        let n = inputs.features.rows();
        let m = inputs.replay_features.rows();
        if inputs.labels.len() != n || inputs.replay_labels.len() != m {
            return Err(Error::Input("labels do not match feature rows".into()));
        }
        let w = inputs.weights;
        let union = inputs.features.vstack(inputs.replay_features)?;
        if union.rows() == 0 {
            return Err(Error::Input("empty training step".into()));
        }
        let labels: Vec<ClassId> = inputs
            .labels
            .iter()
            .chain(inputs.replay_labels)
            .copied()
            .collect();

        let (latents, head_trace) = model.head.forward(&union)?;
        let logits = model.classifier.forward(&latents)?;
        let c = logits.cols();
        let mut parts = LossParts::default();
        let mut dlogits = Matrix::zeros(union.rows(), c);

        if n > 0 {
            let (v, g) = cross_entropy(&logits.select_rows(&(0..n).collect::<Vec<_>>()), inputs.labels)?;
            parts.cls = v;
            for i in 0..n {
                axpy(w.cls, g.row(i), dlogits.row_mut(i));
            }
        }
        if m > 0 {
            let (v, g) = cross_entropy(&logits.select_rows(&(n..n + m).collect::<Vec<_>>()), inputs.replay_labels)?;
            parts.replay = v;
            for i in 0..m {
                axpy(w.loss.alpha4, g.row(i), dlogits.row_mut(n + i));
            }
        }

        let mut trace = Trace {
            head: head_trace,
            latents,
            dlogits,
            mixed: None,
            protos: None,
            d_fine: BTreeMap::new(),
            d_coarse: BTreeMap::new(),
            d_fine_anchors: None,
            d_coarse_anchors: None,
        };

        let protos = compute_prototypes(&trace.latents, &labels, inputs.taxonomy)?;
        let fine = loss_fine_with_grad(&protos, &model.anchors)?;
        let coarse = loss_coarse_with_grad(&protos, &model.anchors)?;
        parts.l1 = fine.value;
        parts.l2 = coarse.value;
        if w.loss.alpha1 > 0.0 {
            trace.d_fine = scale_map(fine.d_protos, w.loss.alpha1);
            let mut g = fine.d_anchors;
            g.scale(w.loss.alpha1);
            trace.d_fine_anchors = Some(g);
        }
        if w.loss.alpha2 > 0.0 {
            trace.d_coarse = scale_map(coarse.d_protos, w.loss.alpha2);
            let mut g = coarse.d_anchors;
            g.scale(w.loss.alpha2);
            trace.d_coarse_anchors = Some(g);
        }
        if w.loss.alpha1 > 0.0 || w.loss.alpha2 > 0.0 {
            trace.protos = Some(protos);
        }

        let mut branch = 0xcbf2_9ce4_8422_2325u64;
        if !inputs.pairs.is_empty() {
            let d = trace.latents.cols();
            let mut mixed = Matrix::zeros(inputs.pairs.len(), d);
            for (p, pair) in inputs.pairs.iter().enumerate() {
                if pair.first >= union.rows() || pair.second >= union.rows() {
                    return Err(Error::Input(format!("mix pair {p} indexes past the batch")));
                }
                let row = mixed.row_mut(p);
                axpy(pair.beta, trace.latents.row(pair.first), row);
                axpy(1.0 - pair.beta, trace.latents.row(pair.second), row);
            }
            let mixed_logits = model.classifier.forward(&mixed)?;
            let u = loss_unseen_with_grad(&mixed_logits, inputs.tau);
            parts.lu = u.value;
            for (active, arg) in &u.branches {
                branch = fold(branch, u64::from(*active));
                branch = fold(branch, *arg as u64);
            }
            if w.loss.alpha3 > 0.0 {
                let mut g = u.dlogits;
                g.scale(w.loss.alpha3);
                trace.mixed = Some((mixed, g, inputs.pairs.to_vec()));
            }
        }

        self.branch = branch;
        self.trace = Some(trace);
        let mut b = total_loss(parts, &w.loss)?;
        b.total += (w.cls - 1.0) * parts.cls;
        Ok(b)
    }

    /// Accumulates gradients of the last forward pass into `model`.
    pub fn backward(&mut self, model: &mut AttributionModel) -> Result<()> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let mut dz = model.classifier.backward(&trace.latents, &trace.dlogits);
        if let Some((mixed, dmixed, pairs)) = &trace.mixed {
            let dz_mixed = model.classifier.backward(mixed, dmixed);
            for (p, pair) in pairs.iter().enumerate() {
                let g = dz_mixed.row(p).to_vec();
                axpy(pair.beta, &g, dz.row_mut(pair.first));
                axpy(1.0 - pair.beta, &g, dz.row_mut(pair.second));
            }
        }
        if let Some(protos) = &trace.protos {
            protos.backward(&trace.d_fine, &trace.d_coarse, &mut dz);
        }
        model.head.backward(&trace.head, &dz);
        if let Some(g) = &trace.d_fine_anchors {
            model.anchors.fine_mut().accumulate(g);
        }
        if let Some(g) = &trace.d_coarse_anchors {
            model.anchors.coarse_mut().accumulate(g);
        }
        Ok(())
    }
}

fn scale_map(mut m: BTreeMap<usize, Vec<f64>>, s: f64) -> BTreeMap<usize, Vec<f64>> {
    for v in m.values_mut() {
        v.iter_mut().for_each(|x| *x *= s);
    }
    m
}
