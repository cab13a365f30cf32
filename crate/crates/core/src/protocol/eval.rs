use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::ProtocolState;
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{argmax, axpy, softmax, Matrix};
use crate::memory_bank::sample_mix_pairs;
use crate::ClassId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Known(ClassId),
    Unseen,
}

/// Accept the arg-max class when its probability reaches `tau`, else reject.
pub fn decide_from_probs(probs: &[f64], tau: f64) -> Decision {
    let k = argmax(probs);
    if probs[k] < tau {
        Decision::Unseen
    } else {
        Decision::Known(k)
    }
}

/// Decisions and max-softmax confidences for a batch of encoder features.
pub fn decide_batch(state: &ProtocolState, features: &Matrix, tau: f64) -> Result<Vec<(Decision, f64)>> {
    if state.model.num_classes() == 0 {
        return Err(Error::State("model has not been trained on any task".into()));
    }
    if features.rows() == 0 {
        return Ok(Vec::new());
    }
    Ok(state
        .model
        .probabilities(features)?
        .iter()
        .map(|p| (decide_from_probs(p, tau), p[argmax(p)]))
        .collect())
}

pub fn decide(state: &ProtocolState, feature: &[f64]) -> Result<Decision> {
    Ok(decide_batch(state, &Matrix::row_vector(feature), state.tau)?[0].0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task_index: usize,
    pub num_classes: usize,
    pub tau: f64,
    /// Unweighted mean of `per_class_acc`.
    pub avg_acc: f64,
    /// Real-vs-generated accuracy on seen-class test samples; rejections count as generated.
    pub auth_acc: f64,
    /// Fraction of holdout samples rejected; absent without a holdout.
    pub unseen_acc: Option<f64>,
    pub per_class_acc: BTreeMap<String, f64>,
}

/// Scores the model on the test split of every seen class and of the holdout.
pub fn evaluate(state: &ProtocolState, dataset: &Dataset, holdout: &[usize]) -> Result<MetricRecord> {
    evaluate_at(state, dataset, holdout, state.tau)
}

pub fn evaluate_at(state: &ProtocolState, dataset: &Dataset, holdout: &[usize], tau: f64) -> Result<MetricRecord> {
    let real = state.taxonomy.real_class();
    let mut per_class = BTreeMap::new();
    let (mut auth_ok, mut auth_n) = (0usize, 0usize);
    for c in 0..state.num_classes() {
        let test = &dataset.classes[state.class_source[c]].test;
        let name = state.taxonomy.class_name(c);
        if test.rows() == 0 {
            return Err(Error::Eval(format!("class `{name}` has no test samples")));
        }
        let decisions = decide_batch(state, test, tau)?;
        let correct = decisions.iter().filter(|(d, _)| *d == Decision::Known(c)).count();
        per_class.insert(name.to_owned(), correct as f64 / test.rows() as f64);
        let truth_real = Some(c) == real;
        for (d, _) in &decisions {
            let pred_real = matches!(d, Decision::Known(k) if Some(*k) == real);
            auth_ok += usize::from(pred_real == truth_real);
        }
        auth_n += decisions.len();
    }
    if per_class.is_empty() {
        return Err(Error::Eval("no seen classes to evaluate".into()));
    }

    let (mut rejected, mut total) = (0usize, 0usize);
    for &h in holdout {
        let test = &dataset.classes[h].test;
        let decisions = decide_batch(state, test, tau)?;
        rejected += decisions.iter().filter(|(d, _)| *d == Decision::Unseen).count();
        total += decisions.len();
    }

    Ok(MetricRecord {
        task_index: state.history.len().saturating_sub(1),
        num_classes: state.num_classes(),
        tau,
        avg_acc: per_class.values().sum::<f64>() / per_class.len() as f64,
        auth_acc: auth_ok as f64 / auth_n as f64,
        unseen_acc: (total > 0).then(|| rejected as f64 / total as f64),
        per_class_acc: per_class,
    })
}

/// Max-softmax of one test sample, for external plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub class: String,
    pub holdout: bool,
    pub predicted: Option<String>,
    pub max_prob: f64,
}

pub fn sample_scores(state: &ProtocolState, dataset: &Dataset, holdout: &[usize]) -> Result<Vec<SampleScore>> {
    let mut sources: Vec<(usize, bool)> = state.class_source.iter().map(|&i| (i, false)).collect();
    sources.extend(holdout.iter().map(|&i| (i, true)));
    let mut out = Vec::new();
    for (i, is_holdout) in sources {
        let name = &dataset.manifest.classes[i].name;
        for (d, p) in decide_batch(state, &dataset.classes[i].test, state.tau)? {
            out.push(SampleScore {
                class: name.clone(),
                holdout: is_holdout,
                predicted: match d {
                    Decision::Known(k) => Some(state.taxonomy.class_name(k).to_owned()),
                    Decision::Unseen => None,
                },
                max_prob: p,
            });
        }
    }
    Ok(out)
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Harmonic mean of the seen-accept rate and the pseudo-unseen reject rate at `tau`.
pub fn calibration_score(seen_conf: &[f64], unseen_conf: &[f64], tau: f64) -> f64 {
    let accept = seen_conf.iter().filter(|&&p| p >= tau).count() as f64 / seen_conf.len().max(1) as f64;
    let reject = unseen_conf.iter().filter(|&&p| p < tau).count() as f64 / unseen_conf.len().max(1) as f64;
    harmonic(accept, reject)
}

/// Grid point with the best calibration score; the earliest wins ties.
pub fn select_tau(seen_conf: &[f64], unseen_conf: &[f64], grid: &[f64]) -> Result<f64> {
    if seen_conf.is_empty() || unseen_conf.is_empty() {
        return Err(Error::Calibration("calibration needs seen and pseudo-unseen samples".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let s = calibration_score(seen_conf, unseen_conf, t);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((t, s));
        }
    }
    best.map(|(t, _)| t)
        .ok_or_else(|| Error::Calibration("empty tau grid".into()))
}

/// Max-softmax confidences on the seen calibration split and on cross-class
/// mixtures of its latents.
pub fn calibration_confidences(state: &ProtocolState, dataset: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = Matrix::zeros(0, dataset.dim);
    let mut labels = Vec::new();
    for c in 0..state.num_classes() {
        if let Some(calib) = &dataset.classes[state.class_source[c]].calib {
            x = x.vstack(calib)?;
            labels.extend(std::iter::repeat_n(c, calib.rows()));
        }
    }
    if x.rows() == 0 {
        return Err(Error::Calibration("empty calibration split".into()));
    }
    let z = state.model.head.project(&x)?;
    let seen: Vec<f64> = state
        .model
        .classifier
        .forward(&z)?
        .iter_rows()
        .map(|r| softmax(r).into_iter().fold(0.0, f64::max))
        .collect();
    // fixed stream so calibration never perturbs training randomness
    let mut rng = ChaCha8Rng::seed_from_u64(state.config.seed ^ 0xca11_b4a7e ^ state.history.len() as u64);
    let pairs = sample_mix_pairs(&labels, &[], x.rows(), &mut rng);
    let mut mixed = Matrix::zeros(pairs.len(), z.cols());
    for (i, p) in pairs.iter().enumerate() {
        axpy(p.beta, z.row(p.first), mixed.row_mut(i));
        axpy(1.0 - p.beta, z.row(p.second), mixed.row_mut(i));
    }
    let unseen = if pairs.is_empty() {
        Vec::new()
    } else {
        state
            .model
            .classifier
            .forward(&mixed)?
            .iter_rows()
            .map(|r| softmax(r).into_iter().fold(0.0, f64::max))
            .collect()
    };
    Ok((seen, unseen))
}

pub fn calibrate_tau(state: &ProtocolState, dataset: &Dataset, grid: &[f64]) -> Result<f64> {
    let (seen, unseen) = calibration_confidences(state, dataset)?;
    select_tau(&seen, &unseen, grid)
}
