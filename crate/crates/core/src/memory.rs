//! Per-cluster exemplar buffers and the replay set built from them.
//!
//! Each cluster gets one buffer of at most `N` feature vectors when it is
//! created. Buffers are never refreshed or shrunk afterwards.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::clustering::{sq_dist, ClusterRegistry, LabeledSet, PseudoLabel};
use crate::error::{Error, Result};
use crate::features::{self, FeatureSet};
use crate::rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum SelectionPolicy {
    /// Members closest to the cluster center, ascending distance, ties by id.
    #[default]
    Nearest,
    /// Uniform sample without replacement, kept in member order.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    pub cluster_id: usize,
    pub exemplars: FeatureSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    dim: usize,
    buffers: Vec<MemoryBuffer>,
}

impl MemoryStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            buffers: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of buffers (one per cluster seen so far).
    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn buffers(&self) -> &[MemoryBuffer] {
        &self.buffers
    }

    pub fn total_exemplars(&self) -> usize {
        self.buffers.iter().map(|b| b.exemplars.count()).sum()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut clusters = Vec::with_capacity(self.buffers.len());
        for b in &self.buffers {
            let file = format!("buffer_{:05}.uvf1", b.cluster_id);
            features::write_feature_set(&b.exemplars, dir.join(&file))?;
            clusters.push(BufferIndex {
                cluster_id: b.cluster_id,
                file,
                ids: b.exemplars.ids().to_vec(),
            });
        }
        let index = MemoryIndex {
            dim: self.dim,
            clusters,
        };
        let p = dir.join(MEMORY_INDEX_FILE);
        let json = serde_json::to_string_pretty(&index).expect("index serializes");
        std::fs::write(&p, json).map_err(|e| Error::io(p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join(MEMORY_INDEX_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let index: MemoryIndex =
            serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))?;
        let mut buffers = Vec::with_capacity(index.clusters.len());
        for (pos, entry) in index.clusters.into_iter().enumerate() {
            let exemplars = features::load_feature_set(dir.join(&entry.file))?;
            if entry.cluster_id != pos || exemplars.ids() != entry.ids.as_slice() {
                return Err(Error::InvalidArgument(format!(
                    "memory index entry {pos} disagrees with {}",
                    entry.file
                )));
            }
            buffers.push(MemoryBuffer {
                cluster_id: entry.cluster_id,
                exemplars,
            });
        }
        Ok(Self {
            dim: index.dim,
            buffers,
        })
    }
}

pub const MEMORY_INDEX_FILE: &str = "memory_index.json";

#[derive(Debug, Serialize, Deserialize)]
struct MemoryIndex {
    dim: usize,
    clusters: Vec<BufferIndex>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BufferIndex {
    cluster_id: usize,
    file: String,
    ids: Vec<String>,
}

/// The `min(n, |members|)` members nearest to `center`, ascending.
pub fn select_exemplars(members: &FeatureSet, center: &[f64], n: usize) -> Result<FeatureSet> {
    select_with_policy(members, center, n, SelectionPolicy::Nearest)
}

pub fn select_with_policy(
    members: &FeatureSet,
    center: &[f64],
    n: usize,
    policy: SelectionPolicy,
) -> Result<FeatureSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("buffer size must be >= 1".into()));
    }
    if center.len() != members.dim() {
        return Err(Error::DimensionMismatch {
            expected: members.dim(),
            got: center.len(),
        });
    }
    let take = n.min(members.count());
    let chosen: Vec<usize> = match policy {
        SelectionPolicy::Nearest => {
            let ids = members.ids();
            let mut scored: Vec<(f64, usize)> = (0..members.count())
                .map(|i| (sq_dist(&members.row_f64(i), center), i))
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
            scored.into_iter().take(take).map(|(_, i)| i).collect()
        }
        SelectionPolicy::Random { seed } => {
            let mut picked =
                index::sample(&mut rng::seeded(seed), members.count(), take).into_vec();
            picked.sort_unstable();
            picked
        }
    };
    let ids: Vec<&str> = chosen.iter().map(|&i| members.ids()[i].as_str()).collect();
    members.subset(&ids)
}

/// Adds one buffer for every registry cluster that has none yet, filled from
/// that cluster's members in `task_features`. Existing buffers are untouched.
pub fn add_cluster_buffers(
    store: &MemoryStore,
    registry: &ClusterRegistry,
    task_features: &FeatureSet,
    assignments: &[PseudoLabel],
    n: usize,
    policy: SelectionPolicy,
) -> Result<MemoryStore> {
    if assignments.len() != task_features.count() {
        return Err(Error::InvalidArgument(format!(
            "{} assignments for {} rows",
            assignments.len(),
            task_features.count()
        )));
    }
    if store.dim != registry.dim() || task_features.dim() != registry.dim() {
        return Err(Error::DimensionMismatch {
            expected: registry.dim(),
            got: task_features.dim(),
        });
    }
    if store.len() > registry.len() {
        return Err(Error::InvalidArgument(format!(
            "store has {} buffers but registry only {} clusters",
            store.len(),
            registry.len()
        )));
    }
    if let Some(bad) = assignments.iter().find(|a| a.0 >= registry.len()) {
        return Err(Error::LabelOutOfRange {
            label: bad.0,
            size: registry.len(),
        });
    }

    let mut next = store.clone();
    for m in store.len()..registry.len() {
        let member_ids: Vec<&str> = assignments
            .iter()
            .zip(task_features.ids())
            .filter(|(a, _)| a.0 == m)
            .map(|(_, id)| id.as_str())
            .collect();
        let members = task_features.subset(&member_ids)?;
        let policy = match policy {
            SelectionPolicy::Random { seed } => SelectionPolicy::Random {
                seed: rng::derive_seed(seed, "memory", m as u64),
            },
            p => p,
        };
        let exemplars = select_with_policy(&members, registry.center(m), n, policy)?;
        next.buffers.push(MemoryBuffer {
            cluster_id: m,
            exemplars,
        });
    }
    Ok(next)
}

/// All buffers concatenated in cluster order, labelled with their buffer id.
pub fn build_replay_set(store: &MemoryStore) -> Result<LabeledSet> {
    let parts: Vec<&FeatureSet> = store.buffers.iter().map(|b| &b.exemplars).collect();
    let features = if parts.is_empty() {
        FeatureSet::empty(store.dim)?
    } else {
        FeatureSet::concat(&parts)?
    };
    let labels = store
        .buffers
        .iter()
        .flat_map(|b| std::iter::repeat_n(PseudoLabel(b.cluster_id), b.exemplars.count()))
        .collect();
    LabeledSet::new(features, labels)
}
