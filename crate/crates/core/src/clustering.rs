//! Per-task k-means, nearest-center pseudo-labelling and the frozen,
//! append-only cluster registry.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureSet};
use crate::rng::{self, SeededRng};

/// Global cluster index assigned to a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PseudoLabel(pub usize);

impl PseudoLabel {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Feature rows paired with their pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: FeatureSet,
    pub labels: Vec<PseudoLabel>,
}

impl LabeledSet {
    pub fn new(features: FeatureSet, labels: Vec<PseudoLabel>) -> Result<Self> {
        if features.count() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} rows but {} labels",
                features.count(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Anything that maps a feature vector to a pseudo-label.
pub trait PseudoLabeler {
    fn pseudo_label(&self, x: &[f64]) -> Result<PseudoLabel>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
    /// Lloyd stops once the Frobenius norm of the center shift drops below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub dim: usize,
    /// `k * dim`, row-major.
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
    pub n_iter: usize,
}

impl KMeansFit {
    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    /// Root-mean-square distance of each cluster's members to its center,
    /// floored at `1e-6`.
    pub fn rms_spreads(&self, points: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.chunks_exact(self.dim).zip(&self.assignments) {
            sums[c] += sq_dist(p, self.center(c));
            counts[c] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(&s, &n)| {
                let rms = if n == 0 { 0.0 } else { (s / n as f64).sqrt() };
                rms.max(MIN_WIDTH)
            })
            .collect()
    }
}

pub const MIN_WIDTH: f64 = 1e-6;

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `centers` by squared distance, lowest index on ties.
fn nearest(p: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn kmeans_fit(features: &FeatureSet, l: usize, seed: u64) -> Result<KMeansFit> {
    kmeans_fit_points(
        &features.to_f64(),
        features.dim(),
        l,
        seed,
        &KMeansConfig::default(),
    )
}

/// Best of `config.n_init` k-means++ seeded Lloyd runs, by inertia.
pub fn kmeans_fit_points(
    points: &[f64],
    dim: usize,
    l: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<KMeansFit> {
    if dim == 0 {
        return Err(Error::InvalidArgument("zero-dimensional features".into()));
    }
    let n = points.len() / dim;
    if l == 0 || n < l {
        return Err(Error::TooFewPoints {
            points: n,
            clusters: l,
        });
    }
    if config.n_init == 0 {
        return Err(Error::InvalidArgument("n_init must be >= 1".into()));
    }
    let runs: Vec<KMeansFit> = (0..config.n_init)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::seeded(rng::derive_seed(seed, "kmeans-restart", r as u64));
            let init = kmeans_plus_plus(points, dim, l, &mut rng);
            lloyd(points, dim, init, config)
        })
        .collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.inertia < runs[best].inertia {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("n_init >= 1"))
}

/// Greedy k-means++ seeding: each new center is the best of `2 + ln k`
/// D²-sampled candidates.
pub fn kmeans_plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut SeededRng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let trials = 2 + (k as f64).ln().floor() as usize;

    let first = rng.gen_range(0..n);
    let mut centers = row(first).to_vec();
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();

    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if total > 0.0 {
                let target = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (i, &d) in closest.iter().enumerate() {
                    acc += d;
                    if acc > target {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                rng.gen_range(0..n)
            };
            let updated: Vec<f64> = (0..n)
                .map(|i| closest[i].min(sq_dist(row(i), row(cand))))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.1) {
                best = Some((cand, potential, updated));
            }
        }
        let (cand, _, updated) = best.expect("at least two trials");
        centers.extend_from_slice(row(cand));
        closest = updated;
    }
    centers
}

/// Lloyd iterations from `centers`. Empty clusters take the point farthest
/// from its current center (among clusters with more than one member).
pub fn lloyd(
    points: &[f64],
    dim: usize,
    mut centers: Vec<f64>,
    config: &KMeansConfig,
) -> KMeansFit {
    let n = points.len() / dim;
    let k = centers.len() / dim;
    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut history = Vec::new();
    let mut n_iter = 0;

    for _ in 0..config.max_iter {
        n_iter += 1;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (j, d) = nearest(p, &centers, dim);
            assignments[i] = j;
            dists[i] = d;
        }
        history.push(dists.iter().sum());

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor =
                (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .fold(None::<usize>, |best, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    });
            if let Some(i) = donor {
                counts[assignments[i]] -= 1;
                counts[c] = 1;
                assignments[i] = c;
                dists[i] = 0.0;
            }
        }

        let mut sums = vec![0.0; k * dim];
        for (p, &a) in points.chunks_exact(dim).zip(&assignments) {
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = counts[c] as f64;
            for t in 0..dim {
                let new = sums[c * dim + t] / inv;
                let old = centers[c * dim + t];
                shift += (new - old) * (new - old);
                centers[c * dim + t] = new;
            }
        }
        if shift.sqrt() < config.tol {
            break;
        }
    }

    for (i, p) in points.chunks_exact(dim).enumerate() {
        let (j, d) = nearest(p, &centers, dim);
        assignments[i] = j;
        dists[i] = d;
    }
    let inertia = dists.iter().sum();
    KMeansFit {
        dim,
        centers,
        assignments,
        inertia,
        inertia_history: history,
        n_iter,
    }
}

/// Ordered, append-only list of frozen cluster centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRegistry {
    dim: usize,
    centers: Vec<f64>,
    widths: Vec<f64>,
    origin_task: Vec<usize>,
    l_per_task: Vec<usize>,
}

impl ClusterRegistry {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            centers: Vec::new(),
            widths: Vec::new(),
            origin_task: Vec::new(),
            l_per_task: Vec::new(),
        }
    }

    /// Builds a registry directly from centers, all tagged as task 1.
    pub fn from_centers(dim: usize, centers: Vec<f64>, widths: Vec<f64>) -> Result<Self> {
        if dim == 0 || !centers.len().is_multiple_of(dim) || centers.len() / dim != widths.len() {
            return Err(Error::InvalidArgument(
                "inconsistent center/width shapes".into(),
            ));
        }
        let mut reg = Self::new(dim);
        reg.append(centers, widths);
        Ok(reg)
    }

    fn append(&mut self, centers: Vec<f64>, widths: Vec<f64>) {
        let task = self.l_per_task.len() + 1;
        self.l_per_task.push(widths.len());
        self.origin_task
            .extend(std::iter::repeat_n(task, widths.len()));
        self.centers.extend(centers);
        self.widths.extend(widths);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of centers, `L_k`.
    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Member RMS spread of each center at creation time.
    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn origin_task(&self) -> &[usize] {
        &self.origin_task
    }

    pub fn l_per_task(&self) -> &[usize] {
        &self.l_per_task
    }

    pub fn num_tasks(&self) -> usize {
        self.l_per_task.len()
    }

    pub fn centers_feature_set(&self) -> FeatureSet {
        let ids = (0..self.len()).map(|j| format!("mu{j}")).collect();
        FeatureSet::from_f64(self.dim, &self.centers, ids)
            .expect("registry centers are finite and ids unique")
    }

    pub fn header(&self) -> RegistryHeader {
        RegistryHeader {
            l: self.len(),
            dim: self.dim,
            l_per_task: self.l_per_task.clone(),
            origin_task: self.origin_task.clone(),
            widths: self.widths.clone(),
            centers_file: REGISTRY_CENTERS_FILE.to_string(),
        }
    }

    /// Writes `registry.json` and the UVF1 center payload into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let json = serde_json::to_string_pretty(&self.header()).expect("header serializes");
        let p = dir.join(REGISTRY_HEADER_FILE);
        std::fs::write(&p, json).map_err(|e| Error::io(p, e))?;
        features::write_feature_set(&self.centers_feature_set(), dir.join(REGISTRY_CENTERS_FILE))
    }

    /// Loads a saved registry. Centers come back at `f32` precision.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join(REGISTRY_HEADER_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let header: RegistryHeader =
            serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))?;
        let centers = features::load_feature_set(dir.join(&header.centers_file))?;
        if centers.count() != header.l
            || centers.dim() != header.dim
            || header.widths.len() != header.l
            || header.origin_task.len() != header.l
            || header.l_per_task.iter().sum::<usize>() != header.l
        {
            return Err(Error::InvalidArgument(
                "registry header disagrees with payload".into(),
            ));
        }
        Ok(Self {
            dim: header.dim,
            centers: centers.to_f64(),
            widths: header.widths,
            origin_task: header.origin_task,
            l_per_task: header.l_per_task,
        })
    }
}

pub const REGISTRY_HEADER_FILE: &str = "registry.json";
pub const REGISTRY_CENTERS_FILE: &str = "registry_centers.uvf1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryHeader {
    #[serde(rename = "L")]
    pub l: usize,
    pub dim: usize,
    pub l_per_task: Vec<usize>,
    pub origin_task: Vec<usize>,
    pub widths: Vec<f64>,
    pub centers_file: String,
}

/// Euclidean distance from `x` to every registry center.
pub fn compute_distances(x: &[f64], registry: &ClusterRegistry) -> Result<Vec<f64>> {
    if x.len() != registry.dim {
        return Err(Error::DimensionMismatch {
            expected: registry.dim,
            got: x.len(),
        });
    }
    Ok(registry
        .centers
        .chunks_exact(registry.dim)
        .map(|c| sq_dist(x, c).sqrt())
        .collect())
}

/// Nearest center, lowest index on ties.
pub fn assign_pseudo_label(x: &[f64], registry: &ClusterRegistry) -> Result<PseudoLabel> {
    if registry.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    let d = compute_distances(x, registry)?;
    let mut best = 0;
    for (j, &v) in d.iter().enumerate().skip(1) {
        if v < d[best] {
            best = j;
        }
    }
    Ok(PseudoLabel(best))
}

/// Pseudo-labels for every row of `features`.
pub fn assign_all(features: &FeatureSet, registry: &ClusterRegistry) -> Result<Vec<PseudoLabel>> {
    (0..features.count())
        .into_par_iter()
        .map(|i| assign_pseudo_label(&features.row_f64(i), registry))
        .collect()
}

impl PseudoLabeler for ClusterRegistry {
    fn pseudo_label(&self, x: &[f64]) -> Result<PseudoLabel> {
        assign_pseudo_label(x, self)
    }
}

/// Fits `l` new centers on the task's features alone and appends them.
/// Existing centers are copied untouched.
pub fn learn_task_clusters(
    task_features: &FeatureSet,
    registry: &ClusterRegistry,
    l: usize,
    seed: u64,
) -> Result<ClusterRegistry> {
    if task_features.dim() != registry.dim {
        return Err(Error::DimensionMismatch {
            expected: registry.dim,
            got: task_features.dim(),
        });
    }
    let points = task_features.to_f64();
    let fit = kmeans_fit_points(&points, registry.dim, l, seed, &KMeansConfig::default())?;
    let widths = fit.rms_spreads(&points);
    let mut next = registry.clone();
    next.append(fit.centers, widths);
    Ok(next)
}

/// One-shot clustering of the pooled data, all centers tagged task 1.
pub fn pooled_fit(all_features: &FeatureSet, k_total: usize, seed: u64) -> Result<ClusterRegistry> {
    learn_task_clusters(
        all_features,
        &ClusterRegistry::new(all_features.dim()),
        k_total,
        seed,
    )
}

/// Scales every row to unit L2 norm; zero rows are left as is.
pub fn l2_normalize(set: &FeatureSet) -> FeatureSet {
    let dim = set.dim();
    let mut out = set.to_f64();
    for row in out.chunks_exact_mut(dim) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    FeatureSet::from_f64(dim, &out, set.ids().to_vec()).expect("normalized rows stay finite")
}
