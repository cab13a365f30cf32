use std::collections::BTreeMap;

use super::taxonomy::Taxonomy;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::{ClassId, FamilyId};

/// Means shorter than this have no direction and are excluded.
const MIN_MEAN_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FineProto {
    pub unit: Vec<f64>,
    /// Norm of the class mean before normalization.
    pub mean_norm: f64,
    /// Batch rows that contributed.
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseProto {
    pub unit: Vec<f64>,
    /// Norm of the plain mean of member unit prototypes (diagnostic; < 1 when members disagree).
    pub mean_norm: f64,
    pub members: Vec<ClassId>,
}

/// Batch prototypes: normalized class means and normalized family means of those.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrototypeSet {
    pub fine: BTreeMap<ClassId, FineProto>,
    pub coarse: BTreeMap<FamilyId, CoarseProto>,
    /// Samples seen per class, including classes excluded as degenerate.
    pub support: BTreeMap<ClassId, usize>,
    pub degenerate: Vec<ClassId>,
}

/// Builds prototypes from a batch of latents (one per row) and their labels.
pub fn compute_prototypes(latents: &Matrix, labels: &[ClassId], tax: &Taxonomy) -> Result<PrototypeSet> {
    if latents.rows() == 0 {
        return Err(Error::Input("cannot build prototypes from an empty batch".into()));
    }
    if labels.len() != latents.rows() {
        return Err(Error::Input(format!(
            "{} labels for {} latents",
            labels.len(),
            latents.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= tax.num_classes()) {
        return Err(Error::Input(format!("label {bad} is not a registered class")));
    }

    let d = latents.cols();
    let mut rows_of: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        rows_of.entry(c).or_default().push(i);
    }

    let mut set = PrototypeSet::default();
    for (c, rows) in rows_of {
        set.support.insert(c, rows.len());
        let mut mean = vec![0.0; d];
        for &r in &rows {
            axpy(1.0, latents.row(r), &mut mean);
        }
        let inv = 1.0 / rows.len() as f64;
        mean.iter_mut().for_each(|x| *x *= inv);
        let n = norm(&mean);
        if n < MIN_MEAN_NORM {
            set.degenerate.push(c);
            continue;
        }
        mean.iter_mut().for_each(|x| *x /= n);
        set.fine.insert(
            c,
            FineProto {
                unit: mean,
                mean_norm: n,
                rows,
            },
        );
    }

    let mut members_of: BTreeMap<FamilyId, Vec<ClassId>> = BTreeMap::new();
    for &c in set.fine.keys() {
        members_of.entry(tax.family_of(c)).or_default().push(c);
    }
    for (k, members) in members_of {
        let mut mean = vec![0.0; d];
        for c in &members {
            axpy(1.0, &set.fine[c].unit, &mut mean);
        }
        let inv = 1.0 / members.len() as f64;
        mean.iter_mut().for_each(|x| *x *= inv);
        let n = norm(&mean);
        if n < MIN_MEAN_NORM {
            continue;
        }
        mean.iter_mut().for_each(|x| *x /= n);
        set.coarse.insert(
            k,
            CoarseProto {
                unit: mean,
                mean_norm: n,
                members,
            },
        );
    }
    Ok(set)
}

/// Gradient of `u = v / ||v||` pulled back to `v`.
fn normalize_backward(unit: &[f64], raw_norm: f64, du: &[f64]) -> Vec<f64> {
    let proj = dot(unit, du);
    unit.iter()
        .zip(du)
        .map(|(u, g)| (g - u * proj) / raw_norm)
        .collect()
}

impl PrototypeSet {
    /// Pulls gradients w.r.t. fine and coarse unit prototypes back onto the
    /// batch latents, adding into `dz`.
    pub fn backward(
        &self,
        d_fine: &BTreeMap<ClassId, Vec<f64>>,
        d_coarse: &BTreeMap<FamilyId, Vec<f64>>,
        dz: &mut Matrix,
    ) {
        let d = dz.cols();
        let mut d_unit: BTreeMap<ClassId, Vec<f64>> = self
            .fine
            .keys()
            .map(|&c| (c, d_fine.get(&c).cloned().unwrap_or_else(|| vec![0.0; d])))
            .collect();

        for (k, g) in d_coarse {
            let Some(cp) = self.coarse.get(k) else { continue };
            let dm = normalize_backward(&cp.unit, cp.mean_norm, g);
            let inv = 1.0 / cp.members.len() as f64;
            for c in &cp.members {
                axpy(inv, &dm, d_unit.get_mut(c).expect("member has a fine prototype"));
            }
        }

        for (c, du) in d_unit {
            let fp = &self.fine[&c];
            let ds = normalize_backward(&fp.unit, fp.mean_norm, &du);
            let inv = 1.0 / fp.rows.len() as f64;
            for &r in &fp.rows {
                axpy(inv, &ds, dz.row_mut(r));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::NewModel;
    use chrono::NaiveDate;

    fn taxonomy() -> Taxonomy {
        let d = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let mut t = Taxonomy::new();
        t.register_classes(&[
            NewModel::real("real", d),
            NewModel::generator("a", "fam", d),
            NewModel::generator("b", "fam", d),
        ])
        .unwrap();
        t
    }

    #[test]
    fn single_sample_prototype_is_normalized_sample() {
        let z = Matrix::row_vector(&[3.0, 4.0]);
        let p = compute_prototypes(&z, &[1], &taxonomy()).unwrap();
        assert_eq!(p.fine[&1].unit, vec![0.6, 0.8]);
    }

    #[test]
    fn two_orthogonal_samples_average_to_diagonal() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = compute_prototypes(&z, &[1, 1], &taxonomy()).unwrap();
        let h = 1.0 / 2f64.sqrt();
        for (a, b) in p.fine[&1].unit.iter().zip([h, h]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn coarse_prototype_normalizes_mean_of_fine() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = compute_prototypes(&z, &[1, 2], &taxonomy()).unwrap();
        let cp = &p.coarse[&1];
        let h = 1.0 / 2f64.sqrt();
        assert!((cp.unit[0] - h).abs() < 1e-15 && (cp.unit[1] - h).abs() < 1e-15);
        assert!((cp.mean_norm - h).abs() < 1e-15);
        assert_eq!(cp.members, vec![1, 2]);
    }

    #[test]
    fn cancelling_class_is_flagged_not_zeroed() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let p = compute_prototypes(&z, &[1, 1, 0], &taxonomy()).unwrap();
        assert!(!p.fine.contains_key(&1));
        assert_eq!(p.degenerate, vec![1]);
        assert_eq!(p.support[&1], 2);
        assert!(p.fine.contains_key(&0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(compute_prototypes(&Matrix::zeros(0, 2), &[], &taxonomy()).is_err());
    }
}
