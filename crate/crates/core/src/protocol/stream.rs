use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{Manifest, Role};
use crate::error::{Error, Result};

/// One task: manifest indices of the classes it introduces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub index: usize,
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    /// Manifest indices never trained on, used to measure unseen detection.
    pub holdout: Vec<usize>,
}

impl TaskStream {
    pub fn num_classes(&self) -> usize {
        self.tasks.iter().map(|t| t.classes.len()).sum()
    }
}

/// Manifest indices of holdout classes: those marked `unseen_holdout`, or the
/// `unseen_count` latest-released generators when none are marked.
pub fn holdout_classes(manifest: &Manifest, unseen_count: usize) -> Vec<usize> {
    let marked: Vec<usize> = (0..manifest.classes.len())
        .filter(|&i| manifest.classes[i].role == Role::UnseenHoldout)
        .collect();
    if !marked.is_empty() {
        return marked;
    }
    let mut gens = generators_by_release(manifest, &[]);
    let keep = gens.len().saturating_sub(unseen_count);
    let mut out = gens.split_off(keep);
    out.sort_unstable();
    out
}

/// Generators in release order (ties by manifest order), excluding `skip`.
fn generators_by_release(manifest: &Manifest, skip: &[usize]) -> Vec<usize> {
    let mut gens: Vec<usize> = (0..manifest.classes.len())
        .filter(|&i| manifest.classes[i].role == Role::Generator && !skip.contains(&i))
        .collect();
    gens.sort_by_key(|&i| (manifest.classes[i].release_date, i));
    gens
}

fn real_index(manifest: &Manifest) -> Result<usize> {
    manifest
        .classes
        .iter()
        .position(|c| c.role == Role::Real)
        .ok_or_else(|| Error::Manifest("no real class".into()))
}

/// Incremental stream: task 0 = real + one seeded-random generator, then the
/// remaining generators in release order, `task_size` per task.
pub fn build_stream_ep1(manifest: &Manifest, task_size: usize, seed: u64, unseen_count: usize) -> Result<TaskStream> {
    if task_size == 0 {
        return Err(Error::Config("L must be at least 1".into()));
    }
    let real = real_index(manifest)?;
    let holdout = holdout_classes(manifest, unseen_count);
    let mut gens = generators_by_release(manifest, &holdout);
    if gens.is_empty() {
        return Err(Error::Manifest("no trainable generators left after the holdout".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = gens.remove(rng.gen_range(0..gens.len()));
    let mut tasks = vec![Task {
        index: 0,
        classes: vec![real, first],
    }];
    for chunk in gens.chunks(task_size) {
        tasks.push(Task {
            index: tasks.len(),
            classes: chunk.to_vec(),
        });
    }
    Ok(TaskStream { tasks, holdout })
}

/// Static stream: one task with every non-holdout class.
pub fn build_stream_ep2(manifest: &Manifest, unseen_count: usize) -> Result<TaskStream> {
    let real = real_index(manifest)?;
    let holdout = holdout_classes(manifest, unseen_count);
    let mut classes = vec![real];
    classes.extend(generators_by_release(manifest, &holdout));
    if classes.len() < 2 {
        return Err(Error::Manifest("no trainable generators left after the holdout".into()));
    }
    Ok(TaskStream {
        tasks: vec![Task { index: 0, classes }],
        holdout,
    })
}
