//! Keep the vectors nearest each cluster center as replay exemplars.

use uvcil::clustering::{assign_all, learn_task_clusters, ClusterRegistry};
use uvcil::memory::{add_cluster_buffers, build_replay_set, MemoryStore, SelectionPolicy};
use uvcil::stream::build_task_stream;
use uvcil::synthetic::{generate_mixture, MixtureSpec};

fn main() -> uvcil::Result<()> {
    let mixture = generate_mixture(&MixtureSpec {
        num_classes: 10,
        dim: 8,
        per_class_count: 50,
        center_scale: 10.0,
        sigma: 1.0,
        seed: 8,
    })?;
    let stream = build_task_stream(&mixture.manifest, 5, 8, true)?;

    let mut registry = ClusterRegistry::new(8);
    let mut store = MemoryStore::new(8);
    for task in &stream.tasks {
        let train = mixture.features.subset(&task.train_ids)?;
        registry = learn_task_clusters(&train, &registry, 5, task.index as u64)?;
        let labels = assign_all(&train, &registry)?;
        store = add_cluster_buffers(
            &store,
            &registry,
            &train,
            &labels,
            20,
            SelectionPolicy::Nearest,
        )?;
        println!(
            "task {}: {} buffers, {} exemplars",
            task.index,
            store.len(),
            store.total_exemplars()
        );
    }

    let replay = build_replay_set(&store)?;
    println!("replay set: {} vectors", replay.len());
    for b in store.buffers().iter().take(3) {
        println!(
            "cluster {} keeps {:?}...",
            b.cluster_id,
            &b.exemplars.ids()[..3]
        );
    }
    Ok(())
}
