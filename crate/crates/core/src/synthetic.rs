//! Seeded isotropic Gaussian mixtures with known class structure, and the
//! brute-force nearest-center oracle used to check pseudo-label assignment.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::PseudoLabel;
use crate::error::{Error, Result};
use crate::features::{self, FeatureSet, Manifest, ManifestEntry, Split};
use crate::rng::{self, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class_count: usize,
    /// Class centers are uniform in `[-center_scale, center_scale]^dim`.
    pub center_scale: f64,
    /// Within-class standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.per_class_count == 0 {
            return Err(Error::Config("mixture counts must be positive".into()));
        }
        if !(self.center_scale > 0.0 && self.center_scale.is_finite()) {
            return Err(Error::Config("center_scale must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMetadata {
    pub spec: MixtureSpec,
    pub min_center_distance: Option<f64>,
    /// Minimum pairwise center distance over sigma; absent for one class.
    pub separability_ratio: Option<f64>,
    pub class_centers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub features: FeatureSet,
    pub manifest: Manifest,
    pub metadata: MixtureMetadata,
}

pub const FEATURES_FILE: &str = "features.uvf1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METADATA_FILE: &str = "metadata.json";

impl Mixture {
    /// Writes `features.uvf1`, `manifest.json` and `metadata.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        features::write_feature_set(&self.features, dir.join(FEATURES_FILE))?;
        self.manifest.save(dir.join(MANIFEST_FILE))?;
        let p = dir.join(METADATA_FILE);
        let json = serde_json::to_string_pretty(&self.metadata).expect("metadata serializes");
        std::fs::write(&p, json).map_err(|e| Error::io(p, e))
    }
}

fn class_centers(spec: &MixtureSpec) -> Vec<Vec<f64>> {
    let mut rng = rng::seeded(rng::derive_seed(spec.seed, "mixture-centers", 0));
    (0..spec.num_classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| rng.gen_range(-spec.center_scale..=spec.center_scale))
                .collect()
        })
        .collect()
}

pub fn generate_mixture(spec: &MixtureSpec) -> Result<Mixture> {
    spec.validate()?;
    let centers = class_centers(spec);
    let mut min_dist: Option<f64> = None;
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            let d = centers[a]
                .iter()
                .zip(&centers[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            min_dist = Some(min_dist.map_or(d, |m| m.min(d)));
        }
    }

    let mut noise = rng::seeded(rng::derive_seed(spec.seed, "mixture-points", 0));
    let mut split_rng = rng::seeded(rng::derive_seed(spec.seed, "mixture-split", 0));
    let n = spec.per_class_count;
    let n_train = (4 * n + 2) / 5;
    let mut data = Vec::with_capacity(spec.num_classes * n * spec.dim);
    let mut ids = Vec::with_capacity(spec.num_classes * n);
    let mut entries = Vec::with_capacity(spec.num_classes * n);
    for (c, center) in centers.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut split_rng);
        let mut is_train = vec![false; n];
        order[..n_train].iter().for_each(|&i| is_train[i] = true);
        for (i, &train) in is_train.iter().enumerate() {
            data.extend(
                center
                    .iter()
                    .map(|m| m + spec.sigma * standard_normal(&mut noise)),
            );
            let id = format!("c{c:04}_{i:05}");
            let split = if train {
                Split::Train
            } else {
                Split::Test
            };
            entries.push(ManifestEntry::new(id.clone(), Some(c as u32), split));
            ids.push(id);
        }
    }

    Ok(Mixture {
        features: FeatureSet::from_f64(spec.dim, &data, ids)?,
        manifest: Manifest::new(entries),
        metadata: MixtureMetadata {
            spec: *spec,
            min_center_distance: min_dist,
            separability_ratio: min_dist.map(|d| d / spec.sigma),
            class_centers: centers,
        },
    })
}

/// Exhaustive nearest-center labels: plain loops, Euclidean distance, the
/// first minimum wins.
pub fn oracle_nearest_center(
    features: &FeatureSet,
    centers: &[Vec<f64>],
) -> Result<Vec<PseudoLabel>> {
    if centers.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    let dim = features.dim();
    for c in centers {
        if c.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.len(),
            });
        }
    }
    let mut labels = Vec::with_capacity(features.count());
    for i in 0..features.count() {
        let x = features.row(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centers.iter().enumerate() {
            let mut acc = 0.0;
            for t in 0..dim {
                let diff = f64::from(x[t]) - c[t];
                acc += diff * diff;
            }
            let d = acc.sqrt();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        labels.push(PseudoLabel(best));
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{assign_all, ClusterRegistry};
    use crate::evaluation::GroundTruth;

    fn spec(num_classes: usize, sigma: f64) -> MixtureSpec {
        MixtureSpec {
            num_classes,
            dim: 8,
            per_class_count: 20,
            center_scale: 10.0,
            sigma,
            seed: 3,
        }
    }

    #[test]
    fn single_class_all_zero_labels() {
        let m = generate_mixture(&spec(1, 1.0)).unwrap();
        let gt = GroundTruth::from_manifest(&m.manifest);
        assert!(m.features.ids().iter().all(|id| gt.label(id) == Some(0)));
        assert!(m.metadata.separability_ratio.is_none());
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = generate_mixture(&spec(4, 1.0)).unwrap();
        let b = generate_mixture(&spec(4, 1.0)).unwrap();
        assert_eq!(a.features.to_bytes(), b.features.to_bytes());
        assert_eq!(a.manifest, b.manifest);
        let gt = GroundTruth::from_manifest(&a.manifest);
        for c in 0..4 {
            let n = a
                .features
                .ids()
                .iter()
                .filter(|id| gt.label(id) == Some(c))
                .count();
            assert_eq!(n, 20);
            let train = a
                .manifest
                .entries()
                .iter()
                .filter(|e| gt.label(&e.id) == Some(c) && e.split == Split::Train)
                .count();
            assert_eq!(train, 16);
        }
    }

    #[test]
    fn tiny_sigma_collapses_onto_centers() {
        let m = generate_mixture(&spec(3, 1e-12)).unwrap();
        for i in 0..m.features.count() {
            let c = i / 20;
            let want: Vec<f32> = m.metadata.class_centers[c]
                .iter()
                .map(|&v| v as f32)
                .collect();
            assert_eq!(m.features.row(i), want.as_slice());
        }
    }

    #[test]
    fn class_means_near_truth() {
        let s = MixtureSpec {
            num_classes: 20,
            dim: 32,
            per_class_count: 100,
            center_scale: 50.0,
            sigma: 1.0,
            seed: 7,
        };
        let m = generate_mixture(&s).unwrap();
        let tol = 3.0 * s.sigma / (s.per_class_count as f64).sqrt();
        for c in 0..20 {
            let mut mean = vec![0.0; 32];
            for i in c * 100..(c + 1) * 100 {
                for (acc, v) in mean.iter_mut().zip(m.features.row_f64(i)) {
                    *acc += v / 100.0;
                }
            }
            for (got, want) in mean.iter().zip(&m.metadata.class_centers[c]) {
                assert!((got - want).abs() < tol, "class {c}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn oracle_behaviour() {
        let m = generate_mixture(&spec(3, 1.0)).unwrap();
        let single = oracle_nearest_center(&m.features, &[vec![0.0; 8]]).unwrap();
        assert!(single.iter().all(|l| l.0 == 0));
        let tie = FeatureSet::from_f64(1, &[0.0], vec!["x".into()]).unwrap();
        assert_eq!(
            oracle_nearest_center(&tie, &[vec![-1.0], vec![1.0]]).unwrap()[0].0,
            0
        );
        assert!(oracle_nearest_center(&tie, &[]).is_err());

        let centers = m.metadata.class_centers.clone();
        let reg = ClusterRegistry::from_centers(8, centers.concat(), vec![1.0; 3]).unwrap();
        assert_eq!(
            assign_all(&m.features, &reg).unwrap(),
            oracle_nearest_center(&m.features, &centers).unwrap()
        );
    }
}
