use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hierarchy::{AnchorSet, PrototypeSet};
use crate::linalg::{axpy, dot, Matrix};

/// Value of an alignment + orthogonality loss with its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentGrad {
    pub value: f64,
    /// Alignment part alone.
    pub alignment: f64,
    /// `||A A^T - I||_F^2` alone.
    pub orthogonality: f64,
    /// dL / d(unit prototype), keyed like the prototypes.
    pub d_protos: BTreeMap<usize, Vec<f64>>,
    /// dL / d(anchor rows).
    pub d_anchors: Matrix,
}

/// `sum_i (1 - <proto_i, anchor_i>) + ||A A^T - I||_F^2`
fn alignment_loss<'a>(
    protos: impl Iterator<Item = (usize, &'a [f64])>,
    anchors: &Matrix,
    level: &str,
) -> Result<AlignmentGrad> {
    let mut d_anchors = Matrix::zeros(anchors.rows(), anchors.cols());
    let mut d_protos = BTreeMap::new();
    let mut alignment = 0.0;
    for (id, unit) in protos {
        if id >= anchors.rows() {
            return Err(Error::Input(format!("{level} prototype {id} has no anchor")));
        }
        let a = anchors.row(id);
        alignment += 1.0 - dot(unit, a);
        d_protos.insert(id, a.iter().map(|x| -x).collect());
        axpy(-1.0, unit, d_anchors.row_mut(id));
    }

    // d/dA ||A A^T - I||^2 = 4 (A A^T - I) A
    let dev = crate::hierarchy::gram_deviation(anchors);
    let orthogonality = dev.frobenius_sq();
    let mut ortho_grad = dev.matmul(anchors);
    ortho_grad.scale(4.0);
    d_anchors.add_assign(&ortho_grad);

    Ok(AlignmentGrad {
        value: alignment + orthogonality,
        alignment,
        orthogonality,
        d_protos,
        d_anchors,
    })
}

pub fn loss_fine_with_grad(protos: &PrototypeSet, anchors: &AnchorSet) -> Result<AlignmentGrad> {
    alignment_loss(
        protos.fine.iter().map(|(&c, p)| (c, p.unit.as_slice())),
        anchors.fine().values(),
        "fine",
    )
}

pub fn loss_coarse_with_grad(protos: &PrototypeSet, anchors: &AnchorSet) -> Result<AlignmentGrad> {
    alignment_loss(
        protos.coarse.iter().map(|(&k, p)| (k, p.unit.as_slice())),
        anchors.coarse().values(),
        "coarse",
    )
}

/// Model-level alignment over classes present in `protos`, plus orthogonality of all fine anchors.
pub fn loss_fine(protos: &PrototypeSet, anchors: &AnchorSet) -> Result<f64> {
    loss_fine_with_grad(protos, anchors).map(|g| g.value)
}

/// Family-level counterpart of [`loss_fine`].
pub fn loss_coarse(protos: &PrototypeSet, anchors: &AnchorSet) -> Result<f64> {
    loss_coarse_with_grad(protos, anchors).map(|g| g.value)
}
