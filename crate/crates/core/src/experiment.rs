//! End-to-end experiment runner: loads data, walks the task stream stage by
//! stage and writes reports plus every model artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{self, ExpandInit, HeadMode, RbfClassifier, TrainConfig};
use crate::clustering::{self, ClusterRegistry, LabeledSet, PseudoLabeler};
use crate::error::{Error, Result};
use crate::evaluation::{self, AccuracyMatrix, GroundTruth, MatchingScope, MetricsReport};
use crate::features::{self, FeatureSet, Manifest};
use crate::memory::{self, MemoryStore, SelectionPolicy};
use crate::rng::derive_seed;
use crate::stream::{self, Task, TaskStream};
use crate::synthetic::{self, MixtureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Frozen-center clustering only.
    #[serde(rename = "clu")]
    Clu,
    /// Clustering plus exemplar replay and the RBF head.
    #[serde(rename = "clu-rbf")]
    CluRbf,
    /// One clustering of all pooled training data.
    #[serde(rename = "all-in-one")]
    AllInOne,
    #[serde(rename = "all-in-one-rbf")]
    AllInOneRbf,
}

impl Variant {
    pub fn uses_head(self) -> bool {
        matches!(self, Variant::CluRbf | Variant::AllInOneRbf)
    }

    pub fn is_pooled(self) -> bool {
        matches!(self, Variant::AllInOne | Variant::AllInOneRbf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            gamma: d.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub features_path: Option<PathBuf>,
    pub manifest_path: Option<PathBuf>,
    /// Generate the data in memory instead of reading files.
    pub synthetic: Option<MixtureSpec>,
    pub variant: Variant,
    pub classes_per_task: usize,
    pub clusters_per_task: usize,
    pub memory_per_cluster: usize,
    pub train: TrainSettings,
    pub fold: Option<u32>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Reject class counts that do not divide into whole tasks.
    pub strict_tasks: bool,
    /// Train on stored exemplars of earlier clusters.
    pub replay: bool,
    pub exemplar_selection: SelectionPolicy,
    /// Feed raw features to the linear layer instead of RBF activations.
    pub rbf_identity: bool,
    pub expand_init: ExpandInit,
    pub matching: MatchingScope,
    pub l2_normalize: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            features_path: None,
            manifest_path: None,
            synthetic: None,
            variant: Variant::Clu,
            classes_per_task: 5,
            clusters_per_task: 5,
            memory_per_cluster: 20,
            train: TrainSettings::default(),
            fold: None,
            seed: 0,
            output_dir: None,
            strict_tasks: false,
            replay: true,
            exemplar_selection: SelectionPolicy::Nearest,
            rbf_identity: false,
            expand_init: ExpandInit::Uniform,
            matching: MatchingScope::Global,
            l2_normalize: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config, or the config embedded in a run manifest.
    /// Relative data paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| bad(&e))?;
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
        if value.get("config_sha256").is_some() {
            value = value
                .get_mut("config")
                .map(serde_json::Value::take)
                .unwrap_or_default();
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| bad(&e))?;
        let base = std::path::absolute(path)
            .map_err(|e| bad(&e))?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        for p in [
            &mut cfg.features_path,
            &mut cfg.manifest_path,
            &mut cfg.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn head_mode(&self) -> HeadMode {
        if self.rbf_identity {
            HeadMode::Identity
        } else {
            HeadMode::Rbf
        }
    }

    pub fn validate(&self) -> Result<()> {
        let files = self.features_path.is_some() || self.manifest_path.is_some();
        match (&self.synthetic, files) {
            (Some(_), true) => {
                return Err(Error::Config(
                    "give either synthetic or data paths, not both".into(),
                ))
            }
            (None, false) => return Err(Error::Config("no data source configured".into())),
            (None, true) if self.features_path.is_none() || self.manifest_path.is_none() => {
                return Err(Error::Config(
                    "features_path and manifest_path go together".into(),
                ))
            }
            _ => {}
        }
        if self.classes_per_task == 0 || self.clusters_per_task == 0 {
            return Err(Error::Config(
                "classes_per_task and clusters_per_task must be >= 1".into(),
            ));
        }
        if self.variant.uses_head() {
            let t = &self.train;
            if self.memory_per_cluster == 0
                || t.batch_size == 0
                || t.learning_rate.is_nan()
                || t.learning_rate <= 0.0
                || t.gamma.is_nan()
                || t.gamma < 0.0
            {
                return Err(Error::Config("invalid memory or training settings".into()));
            }
        }
        if let Some(f) = self.fold {
            if !(1..=3).contains(&f) {
                return Err(Error::Config(format!("fold {f} not in 1..=3")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of this config without `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// What a run allocated, recorded in the run manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceAccounting {
    pub clusters: usize,
    pub memory_buffers: usize,
    pub stored_exemplars: usize,
    pub classifier_outputs: usize,
    pub trainable_params: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: MetricsReport,
    pub stream: TaskStream,
    pub registry: ClusterRegistry,
    pub classifier: Option<RbfClassifier>,
    pub memory: Option<MemoryStore>,
}

impl RunResult {
    pub fn resources(&self) -> ResourceAccounting {
        ResourceAccounting {
            clusters: self.registry.len(),
            memory_buffers: self.memory.as_ref().map_or(0, MemoryStore::len),
            stored_exemplars: self.memory.as_ref().map_or(0, MemoryStore::total_exemplars),
            classifier_outputs: self.classifier.as_ref().map_or(0, RbfClassifier::outputs),
            trainable_params: self.classifier.as_ref().map_or(0, |c| c.params().len()),
        }
    }

    /// Writes reports, model artifacts and the run manifest into `dir`.
    pub fn write(&self, config: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        mkdir(dir)?;
        put(REPORT_FILE, self.report.to_json())?;
        put(STAGE_CSV_FILE, self.report.to_csv())?;
        put(MATRIX_CSV_FILE, matrix_csv(&self.report.accuracy_matrix))?;
        put(STREAM_FILE, self.stream.to_json())?;

        let reg_dir = dir.join("registry");
        mkdir(&reg_dir)?;
        self.registry.save(&reg_dir)?;
        if let Some(clf) = &self.classifier {
            let p = dir.join("classifier");
            mkdir(&p)?;
            clf.save(&p)?;
        }
        if let Some(mem) = &self.memory {
            mem.save(dir.join("memory"))?;
        }

        let mut resolved = config.clone();
        resolved.output_dir = None;
        let manifest = serde_json::json!({
            "crate": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": config.hash(),
            "config": resolved,
            "seeds": {
                "base": config.seed,
                "stream": derive_seed(config.seed, "stream", 0),
            },
            "resources": self.resources(),
        });
        put(
            CONFIG_FILE,
            serde_json::to_string_pretty(&resolved).expect("config serializes"),
        )?;
        put(
            RUN_MANIFEST_FILE,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const STAGE_CSV_FILE: &str = "stage_cacc.csv";
pub const MATRIX_CSV_FILE: &str = "accuracy_matrix.csv";
pub const STREAM_FILE: &str = "stream.json";
pub const CONFIG_FILE: &str = "config.json";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

fn matrix_csv(a: &AccuracyMatrix) -> String {
    let k = a.num_tasks();
    let mut out = String::from("stage");
    (1..=k).for_each(|i| out.push_str(&format!(",task{i}")));
    out.push('\n');
    for (s, row) in a.rows().iter().enumerate() {
        out.push_str(&(s + 1).to_string());
        for v in row {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&(v * 100.0).to_string());
            }
        }
        out.push('\n');
    }
    out
}

fn load_data(config: &ExperimentConfig) -> Result<(FeatureSet, Manifest)> {
    if let Some(spec) = &config.synthetic {
        let m = synthetic::generate_mixture(spec)?;
        return Ok((m.features, m.manifest));
    }
    let fp = config.features_path.as_ref().expect("validated");
    let mp = config.manifest_path.as_ref().expect("validated");
    Ok((features::load_feature_set(fp)?, Manifest::load(mp)?))
}

fn empty_labeled(dim: usize) -> Result<LabeledSet> {
    LabeledSet::new(FeatureSet::empty(dim)?, Vec::new())
}

/// Runs the configured protocol in memory.
pub fn execute(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let (mut features, mut manifest) = load_data(config)?;
    let check = features::validate_manifest(&manifest, &features);
    if !check.is_clean() {
        let list: Vec<String> = check.findings.iter().map(ToString::to_string).collect();
        return Err(Error::Validation(list.join("; ")));
    }
    if let Some(fold) = config.fold {
        manifest = stream::task_split_folds(&manifest, fold)?;
    }
    if config.l2_normalize {
        features = clustering::l2_normalize(&features);
    }
    let truth = GroundTruth::from_manifest(&manifest);
    let stream = stream::build_task_stream(
        &manifest,
        config.classes_per_task,
        derive_seed(config.seed, "stream", 0),
        config.strict_tasks,
    )?;
    if config.variant.is_pooled() {
        run_pooled(config, &features, &manifest, &stream, &truth)
    } else {
        run_incremental(config, &features, stream, &truth)
    }
}

fn train_config(config: &ExperimentConfig, stage: usize) -> TrainConfig {
    TrainConfig {
        epochs: config.train.epochs,
        batch_size: config.train.batch_size,
        learning_rate: config.train.learning_rate,
        gamma: config.train.gamma,
        seed: derive_seed(config.seed, "train", stage as u64),
    }
}

fn run_incremental(
    config: &ExperimentConfig,
    features: &FeatureSet,
    stream: TaskStream,
    truth: &GroundTruth,
) -> Result<RunResult> {
    let dim = features.dim();
    let with_head = config.variant.uses_head();
    let mut registry = ClusterRegistry::new(dim);
    let mut store = MemoryStore::new(dim);
    let mut head = RbfClassifier::new(dim, config.head_mode());
    let mut matrix = AccuracyMatrix::new(stream.num_tasks);

    for k in 1..=stream.num_tasks {
        let mut stage = || -> Result<()> {
            let task = stream.task(k).expect("k in range");
            let train = features.subset(&task.train_ids)?;
            registry = clustering::learn_task_clusters(
                &train,
                &registry,
                config.clusters_per_task,
                derive_seed(config.seed, "kmeans", k as u64),
            )?;
            let model: &dyn PseudoLabeler = if with_head {
                let labels = clustering::assign_all(&train, &registry)?;
                let replay = if config.replay {
                    memory::build_replay_set(&store)?
                } else {
                    empty_labeled(dim)?
                };
                if config.replay {
                    let policy = match config.exemplar_selection {
                        SelectionPolicy::Random { seed } => SelectionPolicy::Random {
                            seed: derive_seed(seed, "stage", k as u64),
                        },
                        p => p,
                    };
                    store = memory::add_cluster_buffers(
                        &store,
                        &registry,
                        &train,
                        &labels,
                        config.memory_per_cluster,
                        policy,
                    )?;
                }
                let grown = classifier::expand_outputs_with(
                    &head,
                    &registry,
                    derive_seed(config.seed, "expand", k as u64),
                    config.expand_init,
                )?;
                head = classifier::train_task(
                    &grown,
                    &LabeledSet::new(train, labels)?,
                    &replay,
                    &train_config(config, k),
                )?;
                &head
            } else {
                &registry
            };
            let row =
                evaluation::evaluate_stage(model, features, &stream, truth, k, config.matching)?;
            matrix.set_row(&row);
            Ok(())
        };
        stage().map_err(|e| e.at_stage(k))?;
    }

    Ok(RunResult {
        report: MetricsReport::from_matrix(matrix)?,
        stream,
        registry,
        classifier: with_head.then_some(head),
        memory: (with_head && config.replay).then_some(store),
    })
}

fn run_pooled(
    config: &ExperimentConfig,
    features: &FeatureSet,
    manifest: &Manifest,
    stream: &TaskStream,
    truth: &GroundTruth,
) -> Result<RunResult> {
    let pooled = TaskStream::from_tasks(
        vec![Task {
            index: 1,
            train_ids: stream
                .tasks
                .iter()
                .flat_map(|t| t.train_ids.clone())
                .collect(),
            test_ids: stream
                .tasks
                .iter()
                .flat_map(|t| t.test_ids.clone())
                .collect(),
        }],
        manifest.num_classes(),
    );
    let stage = || -> Result<RunResult> {
        let task = &pooled.tasks[0];
        let train = features.subset(&task.train_ids)?;
        let registry = clustering::pooled_fit(
            &train,
            manifest.num_classes(),
            derive_seed(config.seed, "kmeans", 1),
        )?;
        let mut head = None;
        if config.variant.uses_head() {
            let labels = clustering::assign_all(&train, &registry)?;
            let grown = classifier::expand_outputs_with(
                &RbfClassifier::new(features.dim(), config.head_mode()),
                &registry,
                derive_seed(config.seed, "expand", 1),
                config.expand_init,
            )?;
            head = Some(classifier::train_task(
                &grown,
                &LabeledSet::new(train, labels)?,
                &empty_labeled(features.dim())?,
                &train_config(config, 1),
            )?);
        }
        let model: &dyn PseudoLabeler = match &head {
            Some(h) => h,
            None => &registry,
        };
        let row = evaluation::evaluate_stage(model, features, &pooled, truth, 1, config.matching)?;
        let mut matrix = AccuracyMatrix::new(1);
        matrix.set_row(&row);
        Ok(RunResult {
            report: MetricsReport::from_matrix(matrix)?,
            stream: pooled.clone(),
            registry,
            classifier: head,
            memory: None,
        })
    };
    stage().map_err(|e| e.at_stage(1))
}

/// Runs the experiment and, when `output_dir` is set, writes all artifacts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    let result = execute(config)?;
    if let Some(dir) = &config.output_dir {
        result.write(config, dir)?;
    }
    Ok(result.report)
}

/// Stage-indexed CSV of per-stage CAcc (percent), one column per run dir.
pub fn report_curves<P: AsRef<Path>>(run_dirs: &[P]) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(Error::InvalidArgument("no runs given".into()));
    }
    let mut curves = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let dir = dir.as_ref();
        let p = dir.join(REPORT_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))?;
        let stages: Vec<f64> = v["stage_cacc"]
            .as_array()
            .ok_or_else(|| Error::Validation(format!("{} lacks stage_cacc", p.display())))?
            .iter()
            .filter_map(serde_json::Value::as_f64)
            .collect();
        let label = dir.file_name().map_or_else(
            || dir.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        curves.push((label, stages));
    }
    Ok(evaluation::merge_curves(&curves))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ExperimentConfig {
        ExperimentConfig {
            synthetic: Some(MixtureSpec {
                num_classes: 6,
                dim: 4,
                per_class_count: 20,
                center_scale: 20.0,
                sigma: 0.5,
                seed: 1,
            }),
            variant,
            classes_per_task: 2,
            clusters_per_task: 2,
            memory_per_cluster: 5,
            train: TrainSettings {
                epochs: 5,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn config_defaults_and_keys() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"variant": "clu-rbf", "features_path": "f", "manifest_path": "m"}"#,
        )
        .unwrap();
        assert_eq!(cfg.classes_per_task, 5);
        assert_eq!(cfg.memory_per_cluster, 20);
        assert_eq!(cfg.train.epochs, 50);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert_eq!(cfg.train.gamma, 2.0);
        cfg.validate().unwrap();
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validation_errors_are_config_errors() {
        let mut cfg = tiny(Variant::Clu);
        cfg.synthetic = None;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = tiny(Variant::CluRbf);
        cfg.memory_per_cluster = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny(Variant::Clu);
        cfg.fold = Some(7);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn clu_run_allocates_no_head() {
        let r = execute(&tiny(Variant::Clu)).unwrap();
        assert_eq!(r.stream.num_tasks, 3);
        let res = r.resources();
        assert_eq!(res.memory_buffers, 0);
        assert_eq!(res.classifier_outputs, 0);
        assert_eq!(res.clusters, 6);
        assert!(r.report.acacc > 0.9);
    }

    #[test]
    fn rbf_run_fills_memory() {
        let r = execute(&tiny(Variant::CluRbf)).unwrap();
        let res = r.resources();
        assert_eq!(res.memory_buffers, 6);
        assert_eq!(res.stored_exemplars, 30);
        assert_eq!(res.classifier_outputs, 6);
    }

    #[test]
    fn pooled_run_is_single_stage() {
        let r = execute(&tiny(Variant::AllInOne)).unwrap();
        assert_eq!(r.report.accuracy_matrix.num_tasks(), 1);
        assert!(r.report.bwf.is_none());
        assert!(r.report.acacc > 0.95);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = tiny(Variant::Clu);
        let mut b = a.clone();
        b.output_dir = Some("/tmp/x".into());
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
