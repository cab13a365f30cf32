//! Budgeted per-class store of encoder features, selected by herding and
//! replayed while later tasks train.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, norm, Matrix};
use crate::losses::MixPair;
use crate::ClassId;

pub const DEFAULT_BUDGET: usize = 150;

/// Distances closer than this count as ties (lowest index wins).
const TIE_EPS: f64 = 1e-12;

/// Greedy herding over L2-normalized features. Returns up to `budget`
/// indices, most representative first.
pub fn herding_select(features: &Matrix, budget: usize) -> Result<Vec<usize>> {
    if features.rows() == 0 {
        return Err(Error::Input("herding over an empty feature set".into()));
    }
    if budget == 0 {
        return Err(Error::Input("herding budget must be at least 1".into()));
    }
    let d = features.cols();
    let mut unit: Vec<Option<Vec<f64>>> = Vec::with_capacity(features.rows());
    for (i, row) in features.iter_rows().enumerate() {
        let n = norm(row);
        if n == 0.0 {
            log::warn!("herding: feature {i} has zero norm; it is only selectable last");
            unit.push(None);
        } else {
            unit.push(Some(row.iter().map(|x| x / n).collect()));
        }
    }
    let valid: Vec<usize> = (0..unit.len()).filter(|&i| unit[i].is_some()).collect();
    let mut mean = vec![0.0; d];
    for &i in &valid {
        axpy(1.0, unit[i].as_ref().unwrap(), &mut mean);
    }
    if !valid.is_empty() {
        let inv = 1.0 / valid.len() as f64;
        mean.iter_mut().for_each(|x| *x *= inv);
    }

    let target = budget.min(features.rows());
    let mut chosen = Vec::with_capacity(target);
    let mut taken = vec![false; unit.len()];
    let mut running = vec![0.0; d];
    let mut candidate = vec![0.0; d];
    while chosen.len() < target && chosen.len() < valid.len() {
        let k = chosen.len() as f64;
        let mut best: Option<(usize, f64)> = None;
        for &i in &valid {
            if taken[i] {
                continue;
            }
            let u = unit[i].as_ref().unwrap();
            for j in 0..d {
                candidate[j] = mean[j] - (running[j] + u[j]) / (k + 1.0);
            }
            let dist = norm(&candidate);
            if best.is_none_or(|(_, b)| dist < b - TIE_EPS) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.expect("an unselected valid feature remains");
        taken[i] = true;
        axpy(1.0, unit[i].as_ref().unwrap(), &mut running);
        chosen.push(i);
    }
    chosen.extend((0..unit.len()).filter(|&i| unit[i].is_none()).take(target - chosen.len()));
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    budget: usize,
    feature_dim: usize,
    entries: BTreeMap<ClassId, Matrix>,
}

impl MemoryBank {
    pub fn new(budget: usize, feature_dim: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Config("bank budget must be at least 1".into()));
        }
        Ok(Self {
            budget,
            feature_dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.entries.keys().copied()
    }

    /// Stored features of `class` in herding order.
    pub fn entries(&self, class: ClassId) -> Option<&Matrix> {
        self.entries.get(&class)
    }

    pub fn total_stored(&self) -> usize {
        self.entries.values().map(Matrix::rows).sum()
    }

    /// Stores the herding-selected exemplars of a new class.
    pub fn admit_class(&mut self, class: ClassId, features: &Matrix) -> Result<()> {
        if self.entries.contains_key(&class) {
            return Err(Error::State(format!("class {class} is already in the bank")));
        }
        if features.cols() != self.feature_dim {
            return Err(Error::Input(format!(
                "bank stores dim {}, got {}",
                self.feature_dim,
                features.cols()
            )));
        }
        let order = herding_select(features, self.budget)?;
        self.entries.insert(class, features.select_rows(&order));
        Ok(())
    }

    /// Inserts already-ordered exemplars (checkpoint restore).
    pub(crate) fn insert_raw(&mut self, class: ClassId, exemplars: Matrix) -> Result<()> {
        if exemplars.rows() > self.budget || (exemplars.rows() > 0 && exemplars.cols() != self.feature_dim) {
            return Err(Error::Input(format!("exemplars for class {class} violate bank shape")));
        }
        if self.entries.insert(class, exemplars).is_some() {
            return Err(Error::State(format!("class {class} is already in the bank")));
        }
        Ok(())
    }

    /// Shrinks the budget, keeping each class's herding prefix.
    pub fn truncate(&mut self, budget: usize) {
        self.budget = self.budget.min(budget.max(1));
        for m in self.entries.values_mut() {
            if m.rows() > self.budget {
                *m = m.select_rows(&(0..self.budget).collect::<Vec<_>>());
            }
        }
    }

    /// Class-balanced replay batch: classes visited round-robin in a shuffled
    /// order, a uniform exemplar drawn within each.
    pub fn sample_replay<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<(Matrix, Vec<ClassId>)> {
        if self.entries.is_empty() {
            return Err(Error::State("replay from an empty bank".into()));
        }
        let mut order: Vec<ClassId> = self.entries.keys().copied().collect();
        order.shuffle(rng);
        let mut out = Matrix::zeros(0, self.feature_dim);
        let mut labels = Vec::with_capacity(batch_size);
        for i in 0..batch_size {
            let c = order[i % order.len()];
            let m = &self.entries[&c];
            out.push_row(m.row(rng.gen_range(0..m.rows())))?;
            labels.push(c);
        }
        Ok((out, labels))
    }
}

/// Draws `n_pairs` ordered cross-class pairs uniformly from the rows of the
/// concatenated `[current; bank]` batch, each with its own `beta ~ U(0,1)`.
/// Returns nothing when fewer than two classes are present.
pub fn sample_mix_pairs<R: Rng>(
    current_labels: &[ClassId],
    bank_labels: &[ClassId],
    n_pairs: usize,
    rng: &mut R,
) -> Vec<MixPair> {
    let labels: Vec<ClassId> = current_labels.iter().chain(bank_labels).copied().collect();
    let distinct = labels.iter().any(|&c| c != labels[0]);
    if labels.is_empty() || !distinct {
        log::debug!("mixing skipped: fewer than two classes in the pool");
        return Vec::new();
    }
    let n = labels.len();
    let mut pairs = Vec::with_capacity(n_pairs);
    while pairs.len() < n_pairs {
        let first = rng.gen_range(0..n);
        let second = rng.gen_range(0..n);
        if labels[first] == labels[second] {
            continue;
        }
        pairs.push(MixPair {
            first,
            second,
            beta: rng.gen::<f64>(),
        });
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn single_feature_selects_itself() {
        assert_eq!(herding_select(&gaussian(1, 3, 0), 5).unwrap(), vec![0]);
    }

    #[test]
    fn first_pick_is_closest_to_mean() {
        let f = gaussian(9, 4, 2);
        let order = herding_select(&f, 100).unwrap();
        assert_eq!(order.len(), 9);
        let units: Vec<Vec<f64>> = f.iter_rows().map(|r| r.iter().map(|x| x / norm(r)).collect()).collect();
        let mut mean = vec![0.0; 4];
        units.iter().for_each(|u| axpy(1.0 / 9.0, u, &mut mean));
        let dist = |u: &Vec<f64>| norm(&mean.iter().zip(u).map(|(a, b)| a - b).collect::<Vec<_>>());
        let closest = (0..9).min_by(|&a, &b| dist(&units[a]).total_cmp(&dist(&units[b]))).unwrap();
        assert_eq!(order[0], closest);
    }

    #[test]
    fn zero_feature_is_selected_last() {
        let mut f = gaussian(4, 3, 5);
        f.row_mut(1).fill(0.0);
        let order = herding_select(&f, 4).unwrap();
        assert_eq!(*order.last().unwrap(), 1);
        assert_eq!(herding_select(&f, 3).unwrap().len(), 3);
        assert!(!herding_select(&f, 3).unwrap().contains(&1));
    }

    #[test]
    fn admission_respects_budget() {
        let mut bank = MemoryBank::new(DEFAULT_BUDGET, 5).unwrap();
        bank.admit_class(0, &gaussian(200, 5, 1)).unwrap();
        bank.admit_class(1, &gaussian(10, 5, 2)).unwrap();
        assert_eq!(bank.entries(0).unwrap().rows(), 150);
        assert_eq!(bank.entries(1).unwrap().rows(), 10);
        assert!(matches!(bank.admit_class(1, &gaussian(3, 5, 3)), Err(Error::State(_))));
    }

    #[test]
    fn truncation_matches_smaller_budget_admission() {
        let f = gaussian(120, 6, 8);
        let mut big = MemoryBank::new(100, 6).unwrap();
        big.admit_class(3, &f).unwrap();
        big.truncate(50);
        let mut small = MemoryBank::new(50, 6).unwrap();
        small.admit_class(3, &f).unwrap();
        assert_eq!(big.entries(3), small.entries(3));
    }

    #[test]
    fn replay_of_single_exemplar_repeats_it() {
        let mut bank = MemoryBank::new(150, 2).unwrap();
        let f = Matrix::row_vector(&[0.5, -2.0]);
        bank.admit_class(0, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = bank.sample_replay(4, &mut rng).unwrap();
        assert_eq!(y, vec![0; 4]);
        assert!(x.iter_rows().all(|r| r == f.row(0)));
        assert_eq!(bank.sample_replay(0, &mut rng).unwrap().1.len(), 0);
    }

    #[test]
    fn replay_is_exactly_balanced() {
        let mut bank = MemoryBank::new(150, 3).unwrap();
        bank.admit_class(0, &gaussian(20, 3, 1)).unwrap();
        bank.admit_class(1, &gaussian(30, 3, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (_, y) = bank.sample_replay(100, &mut rng).unwrap();
        assert_eq!(y.iter().filter(|&&c| c == 0).count(), 50);
    }

    #[test]
    fn empty_bank_cannot_replay() {
        let bank = MemoryBank::new(5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(bank.sample_replay(1, &mut rng), Err(Error::State(_))));
    }

    #[test]
    fn mixing_needs_two_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mix_pairs(&[4, 4, 4], &[4], 10, &mut rng).is_empty());
        let pairs = sample_mix_pairs(&[0], &[1], 20, &mut rng);
        assert_eq!(pairs.len(), 20);
        assert!(pairs.iter().all(|p| (p.first, p.second) == (0, 1) || (p.first, p.second) == (1, 0)));
    }
}
