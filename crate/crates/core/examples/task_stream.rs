//! Split a labelled manifest into a stream of disjoint-class tasks.

use uvcil::evaluation::GroundTruth;
use uvcil::stream::{build_task_stream, task_split_folds};
use uvcil::synthetic::{generate_mixture, MixtureSpec};

fn main() -> uvcil::Result<()> {
    let mixture = generate_mixture(&MixtureSpec {
        num_classes: 12,
        dim: 4,
        per_class_count: 10,
        center_scale: 5.0,
        sigma: 1.0,
        seed: 1,
    })?;
    let truth = GroundTruth::from_manifest(&mixture.manifest);

    let stream = build_task_stream(&mixture.manifest, 5, 42, false)?;
    for task in &stream.tasks {
        let mut classes = truth.labels_for(&task.train_ids)?;
        classes.sort_unstable();
        classes.dedup();
        println!(
            "task {}: classes {:?}, {} train / {} test",
            task.index,
            classes,
            task.train_ids.len(),
            task.test_ids.len()
        );
    }

    for fold in 1..=3 {
        let relabelled = task_split_folds(&mixture.manifest, fold)?;
        let first = build_task_stream(&relabelled, 5, 42, false)?;
        let mut original = truth.labels_for(&first.tasks[0].train_ids)?;
        original.sort_unstable();
        original.dedup();
        println!("fold {fold}: first task holds original classes {original:?}");
    }
    Ok(())
}
