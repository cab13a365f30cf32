use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Parameter, Parameterized};
use crate::error::{Error, Result};
use crate::linalg::{norm, orthonormal_extension, Matrix};

/// Learnable unit anchors, one per class (fine) and one per family (coarse).
///
/// Each anchor is stored as a row, so the row Gram matrix `A A^T` plays the
/// role of `Q^T Q` for column-stacked anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    fine: Parameter,
    coarse: Parameter,
}

impl AnchorSet {
    pub fn new(latent_dim: usize) -> Self {
        Self {
            fine: Parameter::new("anchors.fine", Matrix::zeros(0, latent_dim)),
            coarse: Parameter::new("anchors.coarse", Matrix::zeros(0, latent_dim)),
        }
    }

    /// Wraps explicit anchor rows; rows are used as given (not normalized).
    pub fn from_rows(fine: Matrix, coarse: Matrix) -> Result<Self> {
        if fine.cols() != coarse.cols() && fine.rows() > 0 && coarse.rows() > 0 {
            return Err(Error::Input("fine and coarse anchors differ in dimension".into()));
        }
        Ok(Self {
            fine: Parameter::new("anchors.fine", fine),
            coarse: Parameter::new("anchors.coarse", coarse),
        })
    }

    pub(crate) fn from_params(fine: Parameter, coarse: Parameter) -> Self {
        Self { fine, coarse }
    }

    pub fn latent_dim(&self) -> usize {
        self.fine.shape().1
    }

    pub fn num_fine(&self) -> usize {
        self.fine.shape().0
    }

    pub fn num_coarse(&self) -> usize {
        self.coarse.shape().0
    }

    pub fn fine(&self) -> &Parameter {
        &self.fine
    }

    pub fn coarse(&self) -> &Parameter {
        &self.coarse
    }

    pub fn fine_mut(&mut self) -> &mut Parameter {
        &mut self.fine
    }

    pub fn coarse_mut(&mut self) -> &mut Parameter {
        &mut self.coarse
    }

    /// Appends anchors orthogonal to every existing anchor of the same level.
    pub fn grow<R: Rng>(&mut self, n_new_classes: usize, n_new_families: usize, rng: &mut R) -> Result<()> {
        let d = self.latent_dim();
        for (p, n_new, level) in [
            (&self.fine, n_new_classes, "fine"),
            (&self.coarse, n_new_families, "coarse"),
        ] {
            if p.shape().0 + n_new > d {
                return Err(Error::Capacity(format!(
                    "{level} anchors: {} existing + {n_new} new exceed latent dim {d}",
                    p.shape().0
                )));
            }
        }
        let fine_rows = orthonormal_extension(self.fine.values(), n_new_classes, rng)?;
        let coarse_rows = orthonormal_extension(self.coarse.values(), n_new_families, rng)?;
        self.fine.append_rows(&fine_rows)?;
        self.coarse.append_rows(&coarse_rows)?;
        Ok(())
    }

    /// Projects every anchor back onto the unit sphere.
    pub fn renormalize(&mut self) {
        for p in [&mut self.fine, &mut self.coarse] {
            let cols = p.shape().1;
            for row in p.values_mut().as_mut_slice().chunks_exact_mut(cols.max(1)) {
                let n = norm(row);
                if n > 0.0 {
                    row.iter_mut().for_each(|x| *x /= n);
                }
            }
        }
    }

    /// `||A A^T - I||_F` for the fine anchors.
    pub fn fine_orthogonality_error(&self) -> f64 {
        gram_deviation(self.fine.values()).frobenius_sq().sqrt()
    }

    pub fn coarse_orthogonality_error(&self) -> f64 {
        gram_deviation(self.coarse.values()).frobenius_sq().sqrt()
    }

    /// Largest `| ||a|| - 1 |` over all anchors.
    pub fn max_norm_deviation(&self) -> f64 {
        self.fine
            .values()
            .iter_rows()
            .chain(self.coarse.values().iter_rows())
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

impl Parameterized for AnchorSet {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.fine, &self.coarse]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.fine, &mut self.coarse]
    }
}

/// `A A^T - I`.
pub(crate) fn gram_deviation(a: &Matrix) -> Matrix {
    let mut g = a.matmul_t(a);
    for i in 0..g.rows() {
        g[(i, i)] -= 1.0;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_anchor_is_orthogonal_to_existing_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fine = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        let mut a = AnchorSet::from_rows(fine, Matrix::zeros(0, 4)).unwrap();
        a.grow(1, 0, &mut rng).unwrap();
        let new = a.fine().values().row(2);
        assert!(new[0].abs() < 1e-10 && new[1].abs() < 1e-10);
        assert!((norm(new) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn growing_by_zero_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = AnchorSet::new(4);
        a.grow(2, 1, &mut rng).unwrap();
        let before = a.clone();
        a.grow(0, 0, &mut rng).unwrap();
        assert_eq!(a, before);
    }

    #[test]
    fn repeated_growth_stays_orthonormal_and_keeps_old_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a = AnchorSet::new(8);
        a.grow(2, 2, &mut rng).unwrap();
        let first = a.fine().values().clone();
        a.grow(2, 2, &mut rng).unwrap();
        assert!(a.fine_orthogonality_error() <= 1e-10);
        assert!(a.coarse_orthogonality_error() <= 1e-10);
        assert_eq!(&a.fine().values().as_slice()[..16], first.as_slice());
    }

    #[test]
    fn capacity_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = AnchorSet::new(3);
        a.grow(3, 0, &mut rng).unwrap();
        assert!(matches!(a.grow(1, 0, &mut rng), Err(Error::Capacity(_))));
        assert_eq!(a.num_fine(), 3);
    }
}
