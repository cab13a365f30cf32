use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::{calibrate_tau, evaluate, MetricRecord};
use super::stream::Task;
use crate::data_io::{Dataset, Role};
use crate::diffcore::{Adam, Parameterized};
use crate::error::{Error, Result};
use crate::hierarchy::{NewModel, Taxonomy};
use crate::linalg::Matrix;
use crate::losses::{LossBreakdown, MixPair, Objective, StepInputs};
use crate::memory_bank::{sample_mix_pairs, MemoryBank};
use crate::model::AttributionModel;
use crate::ClassId;

/// One optimizer step's losses, as written to the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub task: usize,
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

/// Everything the incremental driver carries between tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolState {
    pub config: TrainConfig,
    pub taxonomy: Taxonomy,
    pub model: AttributionModel,
    /// Present when replay is enabled.
    pub bank: Option<MemoryBank>,
    pub tau: f64,
    pub rng: ChaCha8Rng,
    pub history: Vec<MetricRecord>,
    /// Manifest index of every registered class, indexed by `ClassId`.
    pub class_source: Vec<usize>,
}

impl ProtocolState {
    pub fn new(config: TrainConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = AttributionModel::new(input_dim, Some(config.hidden_dim), config.latent_dim, &mut rng)?;
        let bank = if config.components.replay {
            Some(MemoryBank::new(config.bank_budget, input_dim)?)
        } else {
            None
        };
        Ok(Self {
            tau: config.tau,
            config,
            taxonomy: Taxonomy::new(),
            model,
            bank,
            rng,
            history: Vec::new(),
            class_source: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.model.head.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.taxonomy.num_classes()
    }

    fn register(&mut self, dataset: &Dataset, task: &Task) -> Result<std::ops::Range<ClassId>> {
        let models: Vec<NewModel> = task
            .classes
            .iter()
            .map(|&i| {
                let e = &dataset.manifest.classes[i];
                NewModel {
                    name: e.name.clone(),
                    family: e.family.clone(),
                    release_date: e.release_date,
                    is_real: e.role == Role::Real,
                }
            })
            .collect();
        let reg = self.taxonomy.register_classes(&models)?;
        self.class_source.extend(&task.classes);
        self.model.classifier.grow(reg.classes.len(), &mut self.rng);
        self.model
            .anchors
            .grow(reg.classes.len(), reg.families.len(), &mut self.rng)?;
        Ok(reg.classes)
    }

    /// Trains one task end to end and appends its evaluation to the history.
    pub fn train_task(
        &mut self,
        dataset: &Dataset,
        task: &Task,
        holdout: &[usize],
        log: &mut dyn FnMut(&StepRecord),
    ) -> Result<MetricRecord> {
        if task.index != self.history.len() {
            return Err(Error::State(format!(
                "task {} arrives after {} completed tasks",
                task.index,
                self.history.len()
            )));
        }
        if dataset.dim != self.input_dim() {
            return Err(Error::Input(format!(
                "dataset dim {} does not match head input dim {}",
                dataset.dim,
                self.input_dim()
            )));
        }
        let new_classes = self.register(dataset, task)?;

        let mut x = Matrix::zeros(0, dataset.dim);
        let mut y = Vec::new();
        for c in new_classes.clone() {
            let train = &dataset.classes[self.class_source[c]].train;
            if train.rows() == 0 {
                return Err(Error::Input(format!(
                    "class `{}` has no training samples",
                    self.taxonomy.class_name(c)
                )));
            }
            x = x.vstack(train)?;
            y.extend(std::iter::repeat_n(c, train.rows()));
        }

        let weights = self.config.effective_weights();
        let adam = Adam::with_lr(self.config.lr);
        let mut objective = Objective::new();
        let mut order: Vec<usize> = (0..x.rows()).collect();
        let mut step = 0;
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.config.batch_size) {
                let xb = x.select_rows(chunk);
                let yb: Vec<ClassId> = chunk.iter().map(|&i| y[i]).collect();
                let (xr, yr) = match &self.bank {
                    Some(bank) if !bank.is_empty() && weights.alpha4 > 0.0 => {
                        bank.sample_replay(chunk.len(), &mut self.rng)?
                    }
                    _ => (Matrix::zeros(0, dataset.dim), Vec::new()),
                };
                let pairs: Vec<MixPair> = if weights.alpha3 > 0.0 {
                    let n = chunk.len().min(cross_class_pairs(&yb, &yr));
                    sample_mix_pairs(&yb, &yr, n, &mut self.rng)
                } else {
                    Vec::new()
                };
                let inputs = StepInputs {
                    features: &xb,
                    labels: &yb,
                    replay_features: &xr,
                    replay_labels: &yr,
                    pairs: &pairs,
                    taxonomy: &self.taxonomy,
                    weights: weights.into(),
                    tau: self.tau,
                };
                let losses = objective.forward(&self.model, &inputs)?;
                objective.backward(&mut self.model)?;
                adam.step_all(self.model.params_mut());
                self.model.anchors.renormalize();
                log(&StepRecord {
                    task: task.index,
                    epoch,
                    step,
                    losses,
                });
                step += 1;
            }
        }

        if let Some(bank) = &mut self.bank {
            for c in new_classes {
                bank.admit_class(c, &dataset.classes[self.class_source[c]].train)?;
            }
        }
        if self.config.calibrate_tau {
            let grid = self.config.tau_grid.clone();
            self.tau = calibrate_tau(self, dataset, &grid)?;
        }
        let mut record = evaluate(self, dataset, holdout)?;
        record.task_index = task.index;
        self.history.push(record.clone());
        Ok(record)
    }
}

/// Ordered pairs of rows with different labels.
fn cross_class_pairs(a: &[ClassId], b: &[ClassId]) -> usize {
    let mut counts = std::collections::BTreeMap::<ClassId, usize>::new();
    for &c in a.iter().chain(b) {
        *counts.entry(c).or_default() += 1;
    }
    let n = a.len() + b.len();
    n * n - counts.values().map(|k| k * k).sum::<usize>()
}
