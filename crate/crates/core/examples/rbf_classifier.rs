//! Train the RBF head with focal loss, expand it for a second task, retrain
//! on new data plus replay.

use uvcil::classifier::{
    expand_outputs, predict, train_task, HeadMode, RbfClassifier, TrainConfig,
};
use uvcil::clustering::{assign_all, learn_task_clusters, ClusterRegistry, LabeledSet};
use uvcil::features::FeatureSet;
use uvcil::memory::{add_cluster_buffers, build_replay_set, MemoryStore, SelectionPolicy};
use uvcil::stream::build_task_stream;
use uvcil::synthetic::{generate_mixture, MixtureSpec};

fn main() -> uvcil::Result<()> {
    let mixture = generate_mixture(&MixtureSpec {
        num_classes: 6,
        dim: 8,
        per_class_count: 60,
        center_scale: 10.0,
        sigma: 1.0,
        seed: 2,
    })?;
    let stream = build_task_stream(&mixture.manifest, 3, 2, true)?;

    let mut registry = ClusterRegistry::new(8);
    let mut store = MemoryStore::new(8);
    let mut head = RbfClassifier::new(8, HeadMode::Rbf);
    for task in &stream.tasks {
        let train = mixture.features.subset(&task.train_ids)?;
        registry = learn_task_clusters(&train, &registry, 3, task.index as u64)?;
        let labels = assign_all(&train, &registry)?;
        let replay = if store.is_empty() {
            LabeledSet::new(FeatureSet::empty(8)?, vec![])?
        } else {
            build_replay_set(&store)?
        };
        store = add_cluster_buffers(
            &store,
            &registry,
            &train,
            &labels,
            10,
            SelectionPolicy::Nearest,
        )?;

        let grown = expand_outputs(&head, &registry, task.index as u64)?;
        let data = LabeledSet::new(train, labels)?;
        head = train_task(
            &grown,
            &data,
            &replay,
            &TrainConfig {
                seed: 7,
                ..Default::default()
            },
        )?;

        let agree = (0..data.features.count())
            .filter(|&i| predict(&data.features.row_f64(i), &head).ok() == Some(data.labels[i]))
            .count();
        println!(
            "task {}: {} outputs, best epoch {:?}, final loss {:.4}, agreement {}/{}",
            task.index,
            head.outputs(),
            head.best_epoch(),
            head.history().last().copied().unwrap_or(f64::NAN),
            agree,
            data.features.count()
        );
    }
    Ok(())
}
