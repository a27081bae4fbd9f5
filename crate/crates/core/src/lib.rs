//! Unsupervised class-incremental learning over precomputed video features.
//!
//! Each task of the stream is clustered with k-means into a fixed number of
//! new clusters whose centers are frozen and appended to a global
//! [`ClusterRegistry`]; samples get the index of their nearest center as a
//! pseudo-label. Optionally, a per-cluster exemplar [`MemoryStore`] feeds
//! replay into an expanding [`RbfClassifier`] trained with a class-balanced
//! focal cross-entropy. Runs are scored by Hungarian-matched cluster accuracy
//! per task, summarised as ACAcc, BWF and FWF.
//!
//! The runnable programs under `examples/` walk through each piece; the
//! `uvcil` binary drives whole experiments from a JSON config.

pub mod classifier;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod memory;
pub mod rng;
pub mod stream;
pub mod synthetic;

pub use classifier::{HeadMode, RbfClassifier, TrainConfig};
pub use clustering::{ClusterRegistry, LabeledSet, PseudoLabel, PseudoLabeler};
pub use error::{Error, Result};
pub use evaluation::{AccuracyMatrix, GroundTruth, MetricsReport};
pub use experiment::{ExperimentConfig, Variant};
pub use features::{FeatureSet, Manifest};
pub use memory::MemoryStore;
pub use stream::TaskStream;

/// Caps the global rayon pool at `threads` workers. Only the first call wins.
pub fn configure_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
