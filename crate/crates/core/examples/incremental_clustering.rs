//! Grow a frozen cluster registry task by task and assign pseudo-labels.

use uvcil::clustering::{assign_pseudo_label, learn_task_clusters, ClusterRegistry};
use uvcil::stream::build_task_stream;
use uvcil::synthetic::{generate_mixture, MixtureSpec};

fn main() -> uvcil::Result<()> {
    let mixture = generate_mixture(&MixtureSpec {
        num_classes: 15,
        dim: 8,
        per_class_count: 40,
        center_scale: 10.0,
        sigma: 1.0,
        seed: 3,
    })?;
    let stream = build_task_stream(&mixture.manifest, 5, 3, true)?;

    let mut registry = ClusterRegistry::new(8);
    for task in &stream.tasks {
        let train = mixture.features.subset(&task.train_ids)?;
        let before = registry.centers().to_vec();
        registry = learn_task_clusters(&train, &registry, 5, task.index as u64)?;
        assert_eq!(&registry.centers()[..before.len()], before.as_slice());
        println!(
            "after task {}: L = {}, widths of new clusters {:.3?}",
            task.index,
            registry.len(),
            &registry.widths()[registry.len() - 5..]
        );
    }

    let probe = mixture.features.row_f64(0);
    println!(
        "first vector -> cluster {}",
        assign_pseudo_label(&probe, &registry)?.0
    );
    println!("cluster origins: {:?}", registry.origin_task());
    Ok(())
}
