//! Feature files and manifests.
//!
//! A feature file ("UVF1") is little-endian throughout:
//!
//! ```text
//! 0..4    magic  b"UVF1"
//! 4..8    u32    version (= 1)
//! 8..12   u32    count
//! 12..16  u32    dim
//! 16..    f32    count * dim values, row-major
//! then    count  ids, each a u16 byte length followed by UTF-8 bytes
//! ```
//!
//! Values are stored as `f32`; every computation downstream works in `f64`.
//! The manifest is a JSON array of `{"id", "label", "split"}` objects. Labels
//! are ground truth and are only handed out through
//! [`GroundTruth`](crate::evaluation::GroundTruth).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UVF1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// An immutable matrix of feature vectors with one unique id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
}

impl FeatureSet {
    pub fn new(dim: usize, data: Vec<f32>, ids: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidFeatureSet("dim must be positive".into()));
        }
        if dim > u32::MAX as usize || ids.len() > u32::MAX as usize {
            return Err(Error::InvalidFeatureSet("count or dim exceeds u32".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::InvalidFeatureSet(format!(
                "{} values for {} rows of dim {}",
                data.len(),
                ids.len(),
                dim
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if id.len() > u16::MAX as usize {
                return Err(Error::InvalidFeatureSet(format!(
                    "id of {} bytes exceeds u16 length prefix",
                    id.len()
                )));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self { dim, data, ids })
    }

    /// Builds a set from `f64` rows, rounding to `f32` storage.
    pub fn from_f64(dim: usize, data: &[f64], ids: Vec<String>) -> Result<Self> {
        Self::new(dim, data.iter().map(|&v| v as f32).collect(), ids)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), Vec::new())
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// All rows widened to `f64`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Rows for `ids`, in the order given.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<FeatureSet> {
        let index = self.id_index();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        let mut out_ids = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            let &row = index.get(id).ok_or_else(|| {
                Error::InvalidArgument(format!("id {id:?} not present in feature set"))
            })?;
            data.extend_from_slice(self.row(row));
            out_ids.push(id.to_string());
        }
        FeatureSet::new(self.dim, data, out_ids)
    }

    /// Row-wise concatenation; ids must stay unique.
    pub fn concat(parts: &[&FeatureSet]) -> Result<FeatureSet> {
        let dim = parts
            .first()
            .map(|p| p.dim)
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut ids = Vec::new();
        for p in parts {
            if p.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.dim,
                });
            }
            data.extend_from_slice(&p.data);
            ids.extend(p.ids.iter().cloned());
        }
        FeatureSet::new(dim, data, ids)
    }

    /// Exact UVF1 encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|s| 2 + s.len()).sum();
        let mut buf = Vec::with_capacity(HEADER_LEN + self.data.len() * 4 + id_bytes);
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.count() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureSet> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic {
                    found: bytes[..4].try_into().unwrap(),
                });
            }
            return Err(Error::Truncated {
                what: format!("{} bytes, header needs {HEADER_LEN}", bytes.len()),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = word(8) as usize;
        let dim = word(12) as usize;
        if dim == 0 {
            return Err(Error::InvalidFeatureSet("dim must be positive".into()));
        }

        let payload_len = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::InvalidFeatureSet("count * dim overflows".into()))?;
        let payload = bytes
            .get(HEADER_LEN..HEADER_LEN + payload_len)
            .ok_or_else(|| Error::Truncated {
                what: format!(
                    "payload has {} bytes, expected {payload_len}",
                    bytes.len() - HEADER_LEN
                ),
            })?;
        let mut data = Vec::with_capacity(count * dim);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: i / dim,
                    col: i % dim,
                });
            }
            data.push(v);
        }

        let mut cursor = HEADER_LEN + payload_len;
        let mut ids = Vec::with_capacity(count);
        for i in 0..count {
            let len_bytes = bytes
                .get(cursor..cursor + 2)
                .ok_or_else(|| Error::Truncated {
                    what: format!("id table ends before id {i}"),
                })?;
            let len = u16::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            cursor += 2;
            let raw = bytes
                .get(cursor..cursor + len)
                .ok_or_else(|| Error::Truncated {
                    what: format!("id {i} needs {len} bytes"),
                })?;
            let id = std::str::from_utf8(raw)
                .map_err(|e| Error::InvalidFeatureSet(format!("id {i} is not UTF-8: {e}")))?;
            ids.push(id.to_string());
            cursor += len;
        }
        if cursor != bytes.len() {
            return Err(Error::InvalidFeatureSet(format!(
                "{} trailing bytes after id table",
                bytes.len() - cursor
            )));
        }
        FeatureSet::new(dim, data, ids)
    }
}

pub fn write_feature_set(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, set.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_feature_set(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSet::from_bytes(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    label: Option<u32>,
    pub split: Split,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, label: Option<u32>, split: Split) -> Self {
        Self {
            id: id.into(),
            label,
            split,
        }
    }

    pub(crate) fn label(&self) -> Option<u32> {
        self.label
    }

    pub(crate) fn with_label(mut self, label: Option<u32>) -> Self {
        self.label = label;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct labels (`max + 1` for a contiguous labelling).
    pub fn num_classes(&self) -> usize {
        self.entries
            .iter()
            .filter_map(|e| e.label)
            .max()
            .map_or(0, |m| m as usize + 1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("manifest", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    /// Manifest id with no row in the feature set.
    DanglingId(String),
    DuplicateManifestId(String),
    /// A label below the maximum that no entry carries.
    LabelGap(u32),
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DanglingId(id) => write!(f, "manifest id {id:?} not found in feature set"),
            Finding::DuplicateManifestId(id) => write!(f, "manifest id {id:?} listed twice"),
            Finding::LabelGap(l) => write!(f, "label {l} missing from contiguous label range"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate_manifest(manifest: &Manifest, set: &FeatureSet) -> ValidationReport {
    let set_ids: HashSet<&str> = set.ids().iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    let mut findings = Vec::new();
    for e in manifest.entries() {
        if !seen.insert(e.id.as_str()) {
            findings.push(Finding::DuplicateManifestId(e.id.clone()));
        } else if !set_ids.contains(e.id.as_str()) {
            findings.push(Finding::DanglingId(e.id.clone()));
        }
    }
    let labels: BTreeSet<u32> = manifest.entries().iter().filter_map(|e| e.label).collect();
    if let Some(&max) = labels.last() {
        findings.extend(
            (0..max)
                .filter(|l| !labels.contains(l))
                .map(Finding::LabelGap),
        );
    }
    ValidationReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn empty_set_is_header_only() {
        let set = FeatureSet::empty(512).unwrap();
        let bytes = set.to_bytes();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..4], b"UVF1");
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 512);
        assert_eq!(FeatureSet::from_bytes(&bytes).unwrap(), set);
    }

    #[test]
    fn payload_is_row_major_le_f32() {
        let set = FeatureSet::new(3, vec![1., 2., 3., 4., 5., 6.], ids(2)).unwrap();
        let bytes = set.to_bytes();
        let payload = &bytes[16..16 + 24];
        let expected: Vec<u8> = [1f32, 2., 3., 4., 5., 6.]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        assert_eq!(payload, expected.as_slice());
        // two ids "v0", "v1": 2 + 2 bytes each
        assert_eq!(bytes.len(), 16 + 24 + 8);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let set = FeatureSet::new(3, vec![1., 2., 3., 4., 5., 6.], ids(2)).unwrap();
        let bytes = set.to_bytes();
        let err = FeatureSet::from_bytes(&bytes[..16 + 20]).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
        let err = FeatureSet::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn nan_names_row() {
        let set = FeatureSet::new(2, vec![0., 1., 2., 3., 4., 5.], ids(3)).unwrap();
        let mut bytes = set.to_bytes();
        let at = 16 + (2 * 2 + 1) * 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match FeatureSet::from_bytes(&bytes).unwrap_err() {
            Error::NonFinite { row, col } => assert_eq!((row, col), (2, 1)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = FeatureSet::empty(4).unwrap().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            FeatureSet::from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));
        let mut bytes = FeatureSet::empty(4).unwrap().to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            FeatureSet::from_bytes(&bytes),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn invariant_violations_rejected_before_write() {
        assert!(matches!(
            FeatureSet::new(1, vec![f32::INFINITY], ids(1)),
            Err(Error::NonFinite { row: 0, col: 0 })
        ));
        assert!(matches!(
            FeatureSet::new(1, vec![0., 1.], vec!["a".into(), "a".into()]),
            Err(Error::DuplicateId(_))
        ));
        assert!(FeatureSet::new(0, vec![], vec![]).is_err());
    }

    #[test]
    fn manifest_json_shape() {
        let m = Manifest::new(vec![
            ManifestEntry::new("a", Some(0), Split::Train),
            ManifestEntry::new("b", None, Split::Test),
        ]);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(
            v,
            serde_json::json!([
                {"id": "a", "label": 0, "split": "train"},
                {"id": "b", "label": null, "split": "test"}
            ])
        );
        assert_eq!(Manifest::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn validation_findings() {
        let set = FeatureSet::new(1, vec![0., 1., 2.], ids(3)).unwrap();
        let clean = Manifest::new(vec![
            ManifestEntry::new("v0", Some(0), Split::Train),
            ManifestEntry::new("v1", Some(1), Split::Test),
        ]);
        assert!(validate_manifest(&clean, &set).is_clean());

        let dangling = Manifest::new(vec![ManifestEntry::new("zz", Some(0), Split::Train)]);
        assert_eq!(
            validate_manifest(&dangling, &set).findings,
            vec![Finding::DanglingId("zz".into())]
        );

        let gap = Manifest::new(vec![
            ManifestEntry::new("v0", Some(0), Split::Train),
            ManifestEntry::new("v1", Some(2), Split::Train),
        ]);
        assert_eq!(
            validate_manifest(&gap, &set).findings,
            vec![Finding::LabelGap(1)]
        );

        let dup = Manifest::new(vec![
            ManifestEntry::new("v0", Some(0), Split::Train),
            ManifestEntry::new("v0", Some(0), Split::Test),
        ]);
        assert_eq!(
            validate_manifest(&dup, &set).findings,
            vec![Finding::DuplicateManifestId("v0".into())]
        );
    }

    #[test]
    fn subset_and_concat() {
        let set = FeatureSet::new(2, vec![0., 0., 1., 1., 2., 2.], ids(3)).unwrap();
        let sub = set.subset(&["v2", "v0"]).unwrap();
        assert_eq!(sub.data(), &[2., 2., 0., 0.]);
        assert!(set.subset(&["nope"]).is_err());
        let other = FeatureSet::new(2, vec![9., 9.], vec!["w".into()]).unwrap();
        let both = FeatureSet::concat(&[&sub, &other]).unwrap();
        assert_eq!(both.count(), 3);
        assert!(FeatureSet::concat(&[&sub, &sub]).is_err());
    }
}
