use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::MetricRecord;
use super::state::{ProtocolState, StepRecord};
use super::stream::{build_stream_ep1, build_stream_ep2, TaskStream};
use crate::data_io::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Ep1,
    Ep2,
}

/// A task stream together with the state training through it. Checkpoints
/// store exactly this, so a run can stop after any task and resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub kind: ProtocolKind,
    pub stream: TaskStream,
    pub state: ProtocolState,
}

impl Experiment {
    /// Incremental protocol with `config.task_size` generators per task.
    pub fn ep1(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        let stream = build_stream_ep1(&dataset.manifest, config.task_size, config.seed, config.unseen_count)?;
        Self::with_stream(ProtocolKind::Ep1, dataset, config, stream)
    }

    /// Joint training on every non-holdout class at once.
    pub fn ep2(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        let stream = build_stream_ep2(&dataset.manifest, config.unseen_count)?;
        Self::with_stream(ProtocolKind::Ep2, dataset, config, stream)
    }

    pub fn with_stream(kind: ProtocolKind, dataset: &Dataset, config: TrainConfig, stream: TaskStream) -> Result<Self> {
        for t in &stream.tasks {
            if let Some(h) = t.classes.iter().find(|c| stream.holdout.contains(c)) {
                return Err(Error::Manifest(format!(
                    "holdout class `{}` scheduled for training",
                    dataset.manifest.classes[*h].name
                )));
            }
        }
        let state = ProtocolState::new(config, dataset.dim)?;
        Ok(Self { kind, stream, state })
    }

    pub fn tasks_done(&self) -> usize {
        self.state.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.tasks_done() >= self.stream.tasks.len()
    }

    /// Trains the next task; `None` once the stream is exhausted.
    pub fn step(&mut self, dataset: &Dataset, log: &mut dyn FnMut(&StepRecord)) -> Result<Option<MetricRecord>> {
        if self.is_finished() {
            return Ok(None);
        }
        let task = self.stream.tasks[self.tasks_done()].clone();
        self.state
            .train_task(dataset, &task, &self.stream.holdout, log)
            .map(Some)
    }

    /// Trains until `stop_after` tasks are complete (or the stream ends).
    pub fn run(
        &mut self,
        dataset: &Dataset,
        stop_after: Option<usize>,
        log: &mut dyn FnMut(&StepRecord),
    ) -> Result<&[MetricRecord]> {
        let end = stop_after.unwrap_or(usize::MAX).min(self.stream.tasks.len());
        while self.tasks_done() < end {
            let rec = self.step(dataset, log)?.expect("task remains");
            log::info!(
                "task {} classes={} avg={:.4} auth={:.4} unseen={}",
                rec.task_index,
                rec.num_classes,
                rec.avg_acc,
                rec.auth_acc,
                rec.unseen_acc.map_or("-".into(), |u| format!("{u:.4}"))
            );
        }
        Ok(&self.state.history)
    }

    pub fn final_metrics(&self) -> Option<&MetricRecord> {
        self.state.history.last()
    }
}

/// Static protocol end to end.
pub fn train_static_ep2(dataset: &Dataset, config: TrainConfig) -> Result<(Experiment, MetricRecord)> {
    let mut exp = Experiment::ep2(dataset, config)?;
    exp.run(dataset, None, &mut |_| {})?;
    let rec = exp.final_metrics().cloned().expect("one task trained");
    Ok((exp, rec))
}
