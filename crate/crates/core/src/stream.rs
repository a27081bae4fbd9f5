//! Class-incremental task streams.
//!
//! Classes are shuffled with a seed and chunked into tasks of
//! `classes_per_task` classes each; a [`Task`] only carries ids, so nothing
//! reachable from training code can recover a ground-truth label.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Manifest, Split};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    /// 1-based position in the stream.
    pub index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStream {
    pub num_tasks: usize,
    pub tasks: Vec<Task>,
    #[serde(skip)]
    classes_per_task: usize,
}

impl TaskStream {
    /// Wraps already-built tasks; `index` fields are renumbered from 1.
    pub fn from_tasks(mut tasks: Vec<Task>, classes_per_task: usize) -> Self {
        for (i, t) in tasks.iter_mut().enumerate() {
            t.index = i + 1;
        }
        Self {
            num_tasks: tasks.len(),
            tasks,
            classes_per_task,
        }
    }

    pub fn classes_per_task(&self) -> usize {
        self.classes_per_task
    }

    /// Task `k` (1-based).
    pub fn task(&self, k: usize) -> Option<&Task> {
        k.checked_sub(1).and_then(|i| self.tasks.get(i))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stream serialization is infallible")
    }
}

/// Partitions `manifest` into disjoint-class tasks.
///
/// When the class count is not a multiple of `classes_per_task` the leftover
/// classes form one smaller final task, unless `strict` is set, in which case
/// it is an error.
pub fn build_task_stream(
    manifest: &Manifest,
    classes_per_task: usize,
    seed: u64,
    strict: bool,
) -> Result<TaskStream> {
    if manifest.is_empty() {
        return Err(Error::InvalidArgument("empty manifest".into()));
    }
    if classes_per_task < 1 {
        return Err(Error::InvalidArgument(
            "classes_per_task must be >= 1".into(),
        ));
    }
    let mut by_class: BTreeMap<u32, (Vec<String>, Vec<String>)> = BTreeMap::new();
    for e in manifest.entries() {
        let label = e.label().ok_or_else(|| {
            Error::InvalidArgument(format!("entry {:?} has no label; tasks need labels", e.id))
        })?;
        let slot = by_class.entry(label).or_default();
        match e.split {
            Split::Train => slot.0.push(e.id.clone()),
            Split::Test => slot.1.push(e.id.clone()),
        }
    }
    let num_classes = manifest.num_classes();
    if by_class.len() != num_classes {
        return Err(Error::InvalidArgument(format!(
            "labels are not contiguous: {} distinct labels, max {}",
            by_class.len(),
            num_classes - 1
        )));
    }
    if strict && !num_classes.is_multiple_of(classes_per_task) {
        return Err(Error::InvalidArgument(format!(
            "{num_classes} classes do not divide into tasks of {classes_per_task}"
        )));
    }

    let mut order: Vec<u32> = by_class.keys().copied().collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(seed, "task-stream", 0)));

    let tasks: Vec<Task> = order
        .chunks(classes_per_task)
        .enumerate()
        .map(|(i, classes)| {
            let mut members: Vec<&str> = Vec::new();
            let mut train_ids = Vec::new();
            let mut test_ids = Vec::new();
            for c in classes {
                let (tr, te) = &by_class[c];
                members.extend(tr.iter().chain(te).map(String::as_str));
            }
            // keep manifest order inside a task so the class layout is not visible
            let member_set: std::collections::HashSet<&str> = members.into_iter().collect();
            for e in manifest.entries() {
                if member_set.contains(e.id.as_str()) {
                    match e.split {
                        Split::Train => train_ids.push(e.id.clone()),
                        Split::Test => test_ids.push(e.id.clone()),
                    }
                }
            }
            Task {
                index: i + 1,
                train_ids,
                test_ids,
            }
        })
        .collect();

    Ok(TaskStream {
        num_tasks: tasks.len(),
        tasks,
        classes_per_task,
    })
}

/// Relabels classes for evaluation fold 1, 2 or 3.
///
/// The class order is a fixed shuffle rotated by a fold-dependent offset, so
/// the three folds see distinct class orders whenever there are at least two
/// classes. Entry order and splits are unchanged.
pub fn task_split_folds(manifest: &Manifest, fold: u32) -> Result<Manifest> {
    if !(1..=3).contains(&fold) {
        return Err(Error::InvalidArgument(format!("fold {fold} not in 1..=3")));
    }
    let n = manifest.num_classes();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(0, "fold-order", 0)));
    if n > 0 {
        let step = (n / 3).max(1);
        order.rotate_left(((fold as usize - 1) * step) % n);
    }
    // order[new] = old  =>  relabel[old] = new
    let mut relabel = vec![0u32; n];
    for (new, &old) in order.iter().enumerate() {
        relabel[old as usize] = new as u32;
    }
    Ok(Manifest::new(
        manifest
            .entries()
            .iter()
            .map(|e| {
                let label = e.label().map(|l| relabel[l as usize]);
                e.clone().with_label(label)
            })
            .collect(),
    ))
}
