//! Cluster accuracy under Hungarian matching, the per-stage accuracy matrix
//! and the ACAcc / BWF / FWF summaries.
//!
//! This is the only module that reads ground-truth labels.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clustering::{PseudoLabel, PseudoLabeler};
use crate::error::{Error, Result};
use crate::features::{FeatureSet, Manifest};
use crate::stream::TaskStream;

/// Ground-truth labels keyed by item id.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    labels: HashMap<String, u32>,
}

impl GroundTruth {
    pub fn from_manifest(manifest: &Manifest) -> Self {
        Self {
            labels: manifest
                .entries()
                .iter()
                .filter_map(|e| e.label().map(|l| (e.id.clone(), l)))
                .collect(),
        }
    }

    pub fn label(&self, id: &str) -> Option<u32> {
        self.labels.get(id).copied()
    }

    pub fn labels_for<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<u32>> {
        ids.iter()
            .map(|id| {
                self.label(id.as_ref()).ok_or_else(|| {
                    Error::InvalidArgument(format!("no ground-truth label for {:?}", id.as_ref()))
                })
            })
            .collect()
    }
}

/// Pseudo-label x ground-truth co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyMatrix {
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl ContingencyMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged contingency matrix".into()));
        }
        let total = counts.iter().flatten().sum();
        Ok(Self { counts, total })
    }

    pub fn from_labels(preds: &[PseudoLabel], truths: &[u32]) -> Result<Self> {
        if preds.len() != truths.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions for {} labels",
                preds.len(),
                truths.len()
            )));
        }
        let p = preds.iter().map(|x| x.0 + 1).max().unwrap_or(0);
        let g = truths.iter().map(|&t| t as usize + 1).max().unwrap_or(0);
        let mut counts = vec![vec![0u64; g]; p];
        for (pr, &t) in preds.iter().zip(truths) {
            counts[pr.0][t as usize] += 1;
        }
        Self::new(counts)
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    pub fn cols(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn get(&self, p: usize, g: usize) -> u64 {
        self.counts[p][g]
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// `mapping[p]` is the ground-truth label matched to pseudo-label `p`.
    pub mapping: Vec<Option<usize>>,
    pub matched: u64,
}

impl Matching {
    pub fn is_correct(&self, pred: PseudoLabel, truth: u32) -> bool {
        self.mapping.get(pred.0).copied().flatten() == Some(truth as usize)
    }
}

/// Maximum-weight one-to-one matching of pseudo-labels to ground-truth labels.
pub fn hungarian_match(m: &ContingencyMatrix) -> Result<Matching> {
    if m.total == 0 || m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidArgument("empty contingency matrix".into()));
    }
    let n = m.rows().max(m.cols());
    let max = m.counts.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| -> i64 {
        if i < m.rows() && j < m.cols() {
            max - m.counts[i][j] as i64
        } else {
            max
        }
    };
    let col_of_row = min_cost_assignment(n, cost);
    let mut mapping = vec![None; m.rows()];
    let mut matched = 0;
    for (p, &g) in col_of_row.iter().enumerate().take(m.rows()) {
        if g < m.cols() {
            mapping[p] = Some(g);
            matched += m.counts[p][g];
        }
    }
    Ok(Matching { mapping, matched })
}

/// O(n^3) shortest-augmenting-path Hungarian algorithm on an `n x n` cost
/// function. Returns the column assigned to each row.
fn min_cost_assignment(n: usize, cost: impl Fn(usize, usize) -> i64) -> Vec<usize> {
    const INF: i64 = i64::MAX / 4;
    // 1-based; index 0 is the virtual row/column.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    col_of_row
}

/// Fraction of items correct after optimally matching pseudo-labels to labels.
pub fn cluster_accuracy(preds: &[PseudoLabel], truths: &[u32]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let m = ContingencyMatrix::from_labels(preds, truths)?;
    Ok(hungarian_match(&m)?.matched as f64 / preds.len() as f64)
}

/// Which test pool the Hungarian mapping is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingScope {
    /// One mapping over all test data seen so far, shared by every task.
    #[default]
    Global,
    /// An independent mapping per task.
    PerTask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    /// Stage `k` (1-based).
    pub stage: usize,
    /// Accuracy on tasks `1..=k`.
    pub accuracies: Vec<f64>,
    /// Accuracy on task `k + 1` before it is learned.
    pub probe: Option<f64>,
}

fn task_predictions(
    model: &dyn PseudoLabeler,
    features: &FeatureSet,
    ids: &[String],
) -> Result<Vec<PseudoLabel>> {
    let index = features.id_index();
    ids.iter()
        .map(|id| {
            let &row = index.get(id.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!("test id {id:?} missing from features"))
            })?;
            model.pseudo_label(&features.row_f64(row))
        })
        .collect()
}

fn matched_fraction(matching: &Matching, preds: &[PseudoLabel], truths: &[u32]) -> f64 {
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|(p, &t)| matching.is_correct(**p, t))
        .count();
    hits as f64 / preds.len() as f64
}

/// Accuracy row for stage `k` and, when `k < K`, the probe on task `k + 1`.
pub fn evaluate_stage(
    model: &dyn PseudoLabeler,
    features: &FeatureSet,
    stream: &TaskStream,
    truth: &GroundTruth,
    k: usize,
    scope: MatchingScope,
) -> Result<StageRow> {
    if k == 0 || k > stream.num_tasks {
        return Err(Error::InvalidArgument(format!(
            "stage {k} outside 1..={}",
            stream.num_tasks
        )));
    }
    let upto = (k + 1).min(stream.num_tasks);
    let mut per_task = Vec::with_capacity(upto);
    for t in &stream.tasks[..upto] {
        if t.test_ids.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "task {} has no test data",
                t.index
            )));
        }
        let preds = task_predictions(model, features, &t.test_ids)?;
        let truths = truth.labels_for(&t.test_ids)?;
        per_task.push((preds, truths));
    }

    let score = |matching: Option<&Matching>, preds: &[PseudoLabel], truths: &[u32]| match matching
    {
        Some(m) => Ok(matched_fraction(m, preds, truths)),
        None => cluster_accuracy(preds, truths),
    };
    let global = match scope {
        MatchingScope::Global => {
            let preds: Vec<PseudoLabel> = per_task[..k].iter().flat_map(|p| p.0.clone()).collect();
            let truths: Vec<u32> = per_task[..k].iter().flat_map(|p| p.1.clone()).collect();
            Some(hungarian_match(&ContingencyMatrix::from_labels(
                &preds, &truths,
            )?)?)
        }
        MatchingScope::PerTask => None,
    };
    let accuracies = per_task[..k]
        .iter()
        .map(|(p, t)| score(global.as_ref(), p, t))
        .collect::<Result<Vec<_>>>()?;
    let probe = match per_task.get(k) {
        Some((p, t)) => Some(score(global.as_ref(), p, t)?),
        None => None,
    };
    Ok(StageRow {
        stage: k,
        accuracies,
        probe,
    })
}

/// `A[k][i]`: accuracy on task `i` after stage `k`, both 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    entries: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            entries: vec![vec![None; num_tasks]; num_tasks],
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, k: usize, i: usize) -> Option<f64> {
        self.entries.get(k - 1)?.get(i - 1).copied().flatten()
    }

    pub fn set(&mut self, k: usize, i: usize, value: f64) {
        self.entries[k - 1][i - 1] = Some(value);
    }

    pub fn set_row(&mut self, row: &StageRow) {
        for (i, &a) in row.accuracies.iter().enumerate() {
            self.set(row.stage, i + 1, a);
        }
        if let Some(p) = row.probe {
            self.set(row.stage, row.stage + 1, p);
        }
    }

    /// Mean of `A[k][1..=k]`.
    pub fn stage_cacc(&self, k: usize) -> Result<f64> {
        let row: Option<Vec<f64>> = (1..=k).map(|i| self.get(k, i)).collect();
        let row = row.ok_or_else(|| Error::InvalidArgument(format!("stage {k} row incomplete")))?;
        Ok(row.iter().sum::<f64>() / k as f64)
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.entries
    }
}

/// Mean over stages of the per-stage mean accuracy.
pub fn acacc(a: &AccuracyMatrix) -> Result<f64> {
    let k = a.num_tasks();
    if k == 0 {
        return Err(Error::InvalidArgument("empty accuracy matrix".into()));
    }
    let stages = (1..=k)
        .map(|s| a.stage_cacc(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(stages.iter().sum::<f64>() / k as f64)
}

/// Mean of `A[K][i] - A[i][i]` over `i < K`; negative means forgetting.
pub fn bwf(a: &AccuracyMatrix) -> Result<f64> {
    let k = a.num_tasks();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "BWF needs at least two tasks".into(),
        ));
    }
    let mut sum = 0.0;
    for i in 1..k {
        let (last, when) = a
            .get(k, i)
            .zip(a.get(i, i))
            .ok_or_else(|| Error::InvalidArgument(format!("missing entries for task {i}")))?;
        sum += last - when;
    }
    Ok(sum / (k - 1) as f64)
}

/// Mean of the pre-learning probes `A[i-1][i]` over `i = 2..=K`.
pub fn fwf(a: &AccuracyMatrix) -> Result<f64> {
    let k = a.num_tasks();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "FWF needs at least two tasks".into(),
        ));
    }
    let mut sum = 0.0;
    for i in 2..=k {
        sum += a
            .get(i - 1, i)
            .ok_or_else(|| Error::InvalidArgument(format!("missing probe for task {i}")))?;
    }
    Ok(sum / (k - 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub acacc: f64,
    pub bwf: Option<f64>,
    pub fwf: Option<f64>,
    pub stage_cacc: Vec<f64>,
    pub accuracy_matrix: AccuracyMatrix,
}

fn pct(v: f64) -> f64 {
    v * 100.0
}

impl MetricsReport {
    pub fn from_matrix(a: AccuracyMatrix) -> Result<Self> {
        let k = a.num_tasks();
        let stage_cacc = (1..=k)
            .map(|s| a.stage_cacc(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            acacc: acacc(&a)?,
            bwf: if k >= 2 { Some(bwf(&a)?) } else { None },
            fwf: if k >= 2 { fwf(&a).ok() } else { None },
            stage_cacc,
            accuracy_matrix: a,
        })
    }

    /// Percent-scaled JSON report.
    pub fn to_json(&self) -> String {
        let matrix: Vec<Vec<Option<f64>>> = self
            .accuracy_matrix
            .rows()
            .iter()
            .map(|r| r.iter().map(|v| v.map(pct)).collect())
            .collect();
        let value = json!({
            "acacc": pct(self.acacc),
            "bwf": self.bwf.map(pct),
            "fwf": self.fwf.map(pct),
            "accuracy_matrix": matrix,
            "stage_cacc": self.stage_cacc.iter().copied().map(pct).collect::<Vec<_>>(),
        });
        serde_json::to_string_pretty(&value).expect("report serializes")
    }

    /// `stage,cacc` rows in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,cacc\n");
        for (i, c) in self.stage_cacc.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, pct(*c)));
        }
        out
    }
}

/// Stage-indexed CSV with one column per labelled curve; short curves leave
/// blank cells.
pub fn merge_curves(curves: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("stage");
    for (label, _) in curves {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    let rows = curves.iter().map(|c| c.1.len()).max().unwrap_or(0);
    for s in 0..rows {
        out.push_str(&(s + 1).to_string());
        for (_, values) in curves {
            out.push(',');
            if let Some(v) = values.get(s) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_identity() {
        let m = ContingencyMatrix::new(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]]).unwrap();
        let r = hungarian_match(&m).unwrap();
        assert_eq!(r.mapping, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(r.matched, 10);
    }

    #[test]
    fn two_by_two() {
        let m = ContingencyMatrix::new(vec![vec![5, 1], vec![0, 4]]).unwrap();
        let r = hungarian_match(&m).unwrap();
        assert_eq!(r.mapping, vec![Some(0), Some(1)]);
        assert_eq!(r.matched, 9);
        assert_eq!(m.total(), 10);
    }

    #[test]
    fn rectangular_leaves_extra_clusters_unmatched() {
        let m = ContingencyMatrix::new(vec![vec![4, 0], vec![1, 0], vec![0, 3]]).unwrap();
        let r = hungarian_match(&m).unwrap();
        assert_eq!(r.matched, 7);
        assert_eq!(r.mapping.iter().filter(|x| x.is_some()).count(), 2);
        assert!(hungarian_match(&ContingencyMatrix::new(vec![vec![0, 0]]).unwrap()).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let p = |v: &[usize]| v.iter().map(|&x| PseudoLabel(x)).collect::<Vec<_>>();
        assert_eq!(cluster_accuracy(&p(&[0, 1, 2]), &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(
            cluster_accuracy(&p(&[2, 0, 1, 1]), &[0, 1, 2, 2]).unwrap(),
            1.0
        );
        assert_eq!(
            cluster_accuracy(&p(&[0, 0, 1, 1]), &[1, 1, 1, 0]).unwrap(),
            0.75
        );
        assert!(cluster_accuracy(&p(&[0]), &[0, 1]).is_err());
        assert!(cluster_accuracy(&[], &[]).is_err());
    }

    fn matrix(rows: &[&[f64]]) -> AccuracyMatrix {
        let mut a = AccuracyMatrix::new(rows.len());
        for (k, r) in rows.iter().enumerate() {
            for (i, &v) in r.iter().enumerate() {
                a.set(k + 1, i + 1, v);
            }
        }
        a
    }

    #[test]
    fn acacc_examples() {
        assert_eq!(acacc(&matrix(&[&[1.0], &[1.0, 1.0]])).unwrap(), 1.0);
        let a = matrix(&[&[0.8], &[0.6, 1.0]]);
        assert!((acacc(&a).unwrap() - 0.8).abs() < 1e-15);
        let c = matrix(&[&[0.3], &[0.3, 0.3], &[0.3, 0.3, 0.3]]);
        assert!((acacc(&c).unwrap() - 0.3).abs() < 1e-15);
        assert!(acacc(&matrix(&[&[0.8], &[0.6]])).is_err());
    }

    #[test]
    fn bwf_examples() {
        assert_eq!(bwf(&matrix(&[&[0.9], &[0.9, 0.5]])).unwrap(), 0.0);
        assert!((bwf(&matrix(&[&[0.9], &[0.7, 1.0]])).unwrap() + 0.2).abs() < 1e-12);
        assert!(bwf(&matrix(&[&[0.5], &[0.8, 1.0]])).unwrap() > 0.0);
        assert!(bwf(&matrix(&[&[0.5]])).is_err());
    }

    #[test]
    fn fwf_examples() {
        let a = matrix(&[&[1.0, 0.02], &[1.0, 1.0, 0.04], &[1.0, 1.0, 1.0]]);
        assert!((fwf(&a).unwrap() - 0.03).abs() < 1e-12);
        let z = matrix(&[&[1.0, 0.0], &[1.0, 1.0]]);
        assert_eq!(fwf(&z).unwrap(), 0.0);
        assert!(fwf(&matrix(&[&[1.0], &[1.0, 1.0]])).is_err());
    }

    #[test]
    fn curves_align() {
        let csv = merge_curves(&[
            ("a".into(), vec![0.5, 0.4, 0.3]),
            ("b".into(), vec![0.9, 0.8]),
        ]);
        assert_eq!(csv, "stage,a,b\n1,0.5,0.9\n2,0.4,0.8\n3,0.3,\n");
    }

    #[test]
    fn report_json_in_percent() {
        let a = matrix(&[&[0.9, 0.0], &[0.7, 1.0]]);
        let r = MetricsReport::from_matrix(a).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!((v["acacc"].as_f64().unwrap() - 87.5).abs() < 1e-9);
        assert!((v["bwf"].as_f64().unwrap() + 20.0).abs() < 1e-9);
        assert_eq!(v["fwf"].as_f64().unwrap(), 0.0);
        assert!(v["accuracy_matrix"][0][1].is_number());
        assert_eq!(r.to_csv().lines().count(), 3);
    }
}
