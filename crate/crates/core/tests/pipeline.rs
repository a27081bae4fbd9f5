use uvcil::classifier::{predict, HeadMode, RbfClassifier};
use uvcil::clustering::{assign_all, ClusterRegistry};
use uvcil::evaluation::{cluster_accuracy, GroundTruth, MatchingScope};
use uvcil::experiment::{self, ExperimentConfig, Variant};
use uvcil::features::Split;
use uvcil::synthetic::{generate_mixture, MixtureSpec};

fn spec(num_classes: usize, seed: u64) -> MixtureSpec {
    MixtureSpec {
        num_classes,
        dim: 16,
        per_class_count: 50,
        center_scale: 10.0,
        sigma: 1.0,
        seed,
    }
}

fn config(num_classes: usize, variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        synthetic: Some(spec(num_classes, 21)),
        variant,
        memory_per_cluster: 10,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn single_task_separable() {
    for variant in [Variant::Clu, Variant::CluRbf] {
        let rep = experiment::execute(&config(5, variant)).unwrap().report;
        assert_eq!(rep.stage_cacc.len(), 1);
        assert!(rep.acacc >= 0.99, "{variant:?}: {}", rep.acacc);
    }
}

#[test]
fn head_agrees_with_nearest_center_on_training_data() {
    let cfg = config(10, Variant::CluRbf);
    let run = experiment::execute(&cfg).unwrap();
    let mix = generate_mixture(cfg.synthetic.as_ref().unwrap()).unwrap();
    let head = run.classifier.as_ref().unwrap();
    let labels = assign_all(&mix.features, &run.registry).unwrap();
    let agree = (0..mix.features.count())
        .filter(|&i| predict(&mix.features.row_f64(i), head).unwrap() == labels[i])
        .count();
    assert!(agree as f64 / mix.features.count() as f64 >= 0.95);
}

#[test]
fn clean_clusters_make_both_variants_agree() {
    let clu = experiment::execute(&config(10, Variant::Clu))
        .unwrap()
        .report;
    let rbf = experiment::execute(&config(10, Variant::CluRbf))
        .unwrap()
        .report;
    assert_eq!(clu.accuracy_matrix, rbf.accuracy_matrix);
    assert_eq!(clu.stage_cacc, vec![1.0, 1.0]);
}

#[test]
fn pooled_variants_are_single_stage() {
    for variant in [Variant::AllInOne, Variant::AllInOneRbf] {
        let rep = experiment::execute(&config(10, variant)).unwrap().report;
        assert_eq!(rep.stage_cacc.len(), 1);
        assert!(rep.bwf.is_none() && rep.fwf.is_none());
        assert!(rep.acacc >= 0.99, "{variant:?}: {}", rep.acacc);
    }
}

#[test]
fn per_task_matching_is_never_worse() {
    let mut cfg = config(15, Variant::Clu);
    cfg.synthetic = Some(MixtureSpec {
        sigma: 4.0,
        ..spec(15, 2)
    });
    let global = experiment::execute(&cfg).unwrap().report;
    cfg.matching = MatchingScope::PerTask;
    let per_task = experiment::execute(&cfg).unwrap().report;
    for (g, p) in global
        .accuracy_matrix
        .rows()
        .iter()
        .zip(per_task.accuracy_matrix.rows())
    {
        for (a, b) in g.iter().zip(p) {
            if let (Some(a), Some(b)) = (a, b) {
                assert!(b + 1e-12 >= *a);
            }
        }
    }
}

#[test]
fn written_run_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(10, Variant::CluRbf);
    cfg.output_dir = Some(dir.path().join("run"));
    let run = experiment::execute(&cfg).unwrap();
    run.write(&cfg, dir.path().join("run")).unwrap();

    let registry = ClusterRegistry::load(dir.path().join("run/registry")).unwrap();
    assert_eq!(registry.len(), 10);
    assert_eq!(registry.l_per_task(), &[5, 5]);
    let head = RbfClassifier::load(dir.path().join("run/classifier"), &registry).unwrap();
    assert_eq!(head.mode(), HeadMode::Rbf);

    let mix = generate_mixture(cfg.synthetic.as_ref().unwrap()).unwrap();
    let original = run.classifier.as_ref().unwrap();
    let same = (0..mix.features.count())
        .filter(|&i| {
            let x = mix.features.row_f64(i);
            predict(&x, &head).unwrap() == predict(&x, original).unwrap()
        })
        .count();
    assert_eq!(same, mix.features.count());

    let reloaded = ExperimentConfig::load(dir.path().join("run/config.json")).unwrap();
    assert_eq!(reloaded.hash(), cfg.hash());
    let csv = experiment::report_curves(&[dir.path().join("run")]).unwrap();
    assert_eq!(csv.lines().next(), Some("stage,run"));
}

#[test]
fn folds_change_task_order_only() {
    let mut cfg = config(15, Variant::Clu);
    let mut seen = Vec::new();
    for fold in 1..=3 {
        cfg.fold = Some(fold);
        let run = experiment::execute(&cfg).unwrap();
        assert_eq!(run.stream.num_tasks, 3);
        seen.push(run.stream.tasks[0].train_ids.clone());
    }
    assert!(seen[0] != seen[1] || seen[1] != seen[2]);
}

#[test]
fn stream_ids_cover_the_manifest() {
    let cfg = config(15, Variant::Clu);
    let run = experiment::execute(&cfg).unwrap();
    let mix = generate_mixture(cfg.synthetic.as_ref().unwrap()).unwrap();
    let truth = GroundTruth::from_manifest(&mix.manifest);
    let mut train = 0;
    let mut test = 0;
    for t in &run.stream.tasks {
        train += t.train_ids.len();
        test += t.test_ids.len();
        let labels = truth.labels_for(&t.test_ids).unwrap();
        let preds = assign_all(&mix.features.subset(&t.test_ids).unwrap(), &run.registry).unwrap();
        assert!(cluster_accuracy(&preds, &labels).unwrap() >= 0.99);
    }
    let n_train = mix
        .manifest
        .entries()
        .iter()
        .filter(|e| e.split == Split::Train)
        .count();
    assert_eq!(train, n_train);
    assert_eq!(train + test, mix.manifest.len());
}

#[test]
fn identity_head_ablation_runs() {
    let mut cfg = config(10, Variant::CluRbf);
    cfg.rbf_identity = true;
    let run = experiment::execute(&cfg).unwrap();
    let head = run.classifier.unwrap();
    assert_eq!(head.mode(), HeadMode::Identity);
    assert_eq!(head.input_dim(), 16);
    assert_eq!(head.params().len(), 10 * 16 + 10);
    assert_eq!(run.report.stage_cacc.len(), 2);
}
