//! RBF classification head over the frozen cluster centers.
//!
//! Hidden unit `j` responds with `exp(-|x - mu_j|^2 / (2 sigma_j^2))`; a linear
//! layer maps the `L` activations to `L` logits and a softmax turns them into
//! pseudo-label probabilities. Only the linear layer is trained, with a
//! class-balanced focal cross-entropy and Adam. Each new task grows the head:
//! previous weights are copied over, new entries are drawn fresh.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{sq_dist, ClusterRegistry, LabeledSet, PseudoLabel, PseudoLabeler};
use crate::error::{Error, Result};
use crate::features::{self, FeatureSet};
use crate::rng;

/// Floor on the target probability inside the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// What the linear layer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Gaussian activations over the registry centers.
    #[default]
    Rbf,
    /// Raw features, bypassing the RBF layer (a plain linear softmax head).
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpandInit {
    /// `uniform(-1/sqrt(L), 1/sqrt(L))` for every new entry.
    #[default]
    Uniform,
    /// New entries start at zero, leaving old logits unchanged.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfClassifier {
    mode: HeadMode,
    dim: usize,
    centers: Vec<f64>,
    widths: Vec<f64>,
    outputs: usize,
    /// `outputs x input_dim`, row-major.
    weights: Vec<f64>,
    biases: Vec<f64>,
    seed: u64,
    history: Vec<f64>,
    best_epoch: Option<usize>,
}

impl RbfClassifier {
    /// A head with no outputs yet; grow it with [`expand_outputs`].
    pub fn new(dim: usize, mode: HeadMode) -> Self {
        Self {
            mode,
            dim,
            centers: Vec::new(),
            widths: Vec::new(),
            outputs: 0,
            weights: Vec::new(),
            biases: Vec::new(),
            seed: 0,
            history: Vec::new(),
            best_epoch: None,
        }
    }

    pub fn from_parts(
        mode: HeadMode,
        dim: usize,
        centers: Vec<f64>,
        widths: Vec<f64>,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        let outputs = widths.len();
        let mut clf = Self::new(dim, mode);
        clf.centers = centers;
        clf.widths = widths;
        clf.outputs = outputs;
        if clf.centers.len() != outputs * dim
            || biases.len() != outputs
            || weights.len() != outputs * clf.input_dim()
        {
            return Err(Error::InvalidArgument(
                "inconsistent classifier shapes".into(),
            ));
        }
        if clf.widths.iter().any(|&w| w.is_nan() || w <= 0.0) {
            return Err(Error::InvalidArgument("RBF widths must be positive".into()));
        }
        clf.weights = weights;
        clf.biases = biases;
        Ok(clf)
    }

    pub fn mode(&self) -> HeadMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of outputs, `L`.
    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn input_dim(&self) -> usize {
        match self.mode {
            HeadMode::Rbf => self.outputs,
            HeadMode::Identity => self.dim,
        }
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    /// Epoch-mean losses recorded by the last [`train_task`] call.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// 1-based epoch whose parameters were kept, if training ran.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    /// Trainable parameters flattened as `[weights..., biases...]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.biases);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let nw = self.weights.len();
        if params.len() != nw + self.biases.len() {
            return Err(Error::DimensionMismatch {
                expected: nw + self.biases.len(),
                got: params.len(),
            });
        }
        self.weights.copy_from_slice(&params[..nw]);
        self.biases.copy_from_slice(&params[nw..]);
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Input to the linear layer.
    pub fn hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            HeadMode::Rbf => rbf_activations(x, self),
            HeadMode::Identity => {
                self.check_dim(x)?;
                Ok(x.to_vec())
            }
        }
    }

    fn logits_from_hidden(&self, h: &[f64]) -> Vec<f64> {
        let n = h.len();
        self.weights
            .chunks_exact(n.max(1))
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits_from_hidden(&self.hidden(x)?))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        if self.outputs == 0 {
            return Err(Error::InvalidArgument(
                "cannot checkpoint an empty head".into(),
            ));
        }
        let w_ids = (0..self.outputs).map(|k| format!("w{k}")).collect();
        let b_ids = (0..self.outputs).map(|k| format!("b{k}")).collect();
        features::write_feature_set(
            &FeatureSet::from_f64(self.input_dim(), &self.weights, w_ids)?,
            dir.join(CLASSIFIER_WEIGHTS_FILE),
        )?;
        features::write_feature_set(
            &FeatureSet::from_f64(1, &self.biases, b_ids)?,
            dir.join(CLASSIFIER_BIAS_FILE),
        )?;
        let header = CheckpointHeader {
            l: self.outputs,
            dim: self.dim,
            input_dim: self.input_dim(),
            mode: self.mode,
            sigma: self.widths.clone(),
            seed: self.seed,
            epoch_loss_history: self.history.clone(),
            best_epoch: self.best_epoch,
            weights_file: CLASSIFIER_WEIGHTS_FILE.into(),
            bias_file: CLASSIFIER_BIAS_FILE.into(),
        };
        let p = dir.join(CLASSIFIER_HEADER_FILE);
        let json = serde_json::to_string_pretty(&header).expect("header serializes");
        std::fs::write(&p, json).map_err(|e| Error::io(p, e))
    }

    /// Restores a checkpoint; centers are taken from `registry`. Parameters
    /// come back at `f32` precision.
    pub fn load(dir: impl AsRef<Path>, registry: &ClusterRegistry) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join(CLASSIFIER_HEADER_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let h: CheckpointHeader =
            serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))?;
        if registry.len() < h.l || registry.dim() != h.dim {
            return Err(Error::InvalidArgument(
                "registry does not match checkpoint".into(),
            ));
        }
        let w = features::load_feature_set(dir.join(&h.weights_file))?;
        let b = features::load_feature_set(dir.join(&h.bias_file))?;
        let mut clf = Self::from_parts(
            h.mode,
            h.dim,
            registry.centers()[..h.l * h.dim].to_vec(),
            h.sigma,
            w.to_f64(),
            b.to_f64(),
        )?;
        clf.seed = h.seed;
        clf.history = h.epoch_loss_history;
        clf.best_epoch = h.best_epoch;
        Ok(clf)
    }
}

pub const CLASSIFIER_HEADER_FILE: &str = "classifier.json";
pub const CLASSIFIER_WEIGHTS_FILE: &str = "classifier_weights.uvf1";
pub const CLASSIFIER_BIAS_FILE: &str = "classifier_bias.uvf1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    #[serde(rename = "L")]
    l: usize,
    dim: usize,
    input_dim: usize,
    mode: HeadMode,
    sigma: Vec<f64>,
    seed: u64,
    epoch_loss_history: Vec<f64>,
    best_epoch: Option<usize>,
    weights_file: String,
    bias_file: String,
}

pub fn rbf_activations(x: &[f64], classifier: &RbfClassifier) -> Result<Vec<f64>> {
    classifier.check_dim(x)?;
    Ok(classifier
        .centers
        .chunks_exact(classifier.dim)
        .zip(&classifier.widths)
        .map(|(c, s)| (-sq_dist(x, c) / (2.0 * s * s)).exp())
        .collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax probabilities over the `L` pseudo-labels.
pub fn forward(x: &[f64], classifier: &RbfClassifier) -> Result<Vec<f64>> {
    if classifier.outputs == 0 {
        return Err(Error::InvalidArgument("classifier has no outputs".into()));
    }
    Ok(softmax(&classifier.logits(x)?))
}

/// Argmax of [`forward`], lowest index on ties.
pub fn predict(x: &[f64], classifier: &RbfClassifier) -> Result<PseudoLabel> {
    let probs = forward(x, classifier)?;
    Ok(PseudoLabel(argmax(&probs)))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate().skip(1) {
        if p > v[best] {
            best = i;
        }
    }
    best
}

impl PseudoLabeler for RbfClassifier {
    fn pseudo_label(&self, x: &[f64]) -> Result<PseudoLabel> {
        predict(x, self)
    }
}

/// `alpha * (1 - exp(-mce))^gamma * mce` with `mce = -ln p[label]`.
pub fn focal_mce_loss(probs: &[f64], label: PseudoLabel, alpha: &[f64], gamma: f64) -> Result<f64> {
    let size = probs.len().min(alpha.len());
    if label.0 >= size {
        return Err(Error::LabelOutOfRange {
            label: label.0,
            size,
        });
    }
    let p = probs[label.0].clamp(PROB_FLOOR, 1.0);
    let mce = -p.ln();
    Ok(alpha[label.0] * (1.0 - (-mce).exp()).powf(gamma) * mce)
}

/// Derivative of the focal loss with respect to the logits.
fn focal_logit_grad(probs: &[f64], label: usize, alpha: f64, gamma: f64, out: &mut [f64]) {
    let p = probs[label];
    if p < PROB_FLOOR {
        out.iter_mut().for_each(|g| *g = 0.0);
        return;
    }
    let q = 1.0 - p;
    // p * dL/dp
    let modulated = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p * p.ln()
    };
    let coeff = alpha * (modulated - q.powf(gamma));
    for (k, g) in out.iter_mut().enumerate() {
        let delta = if k == label { 1.0 } else { 0.0 };
        *g = coeff * (delta - probs[k]);
    }
}

/// Normalized inverse-frequency weights `total / (L * max(count, 1))`.
pub fn compute_alpha_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("all cluster counts are zero".into()));
    }
    let l = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| total as f64 / (l * c.max(1) as f64))
        .collect())
}

/// Mean focal loss and its gradient w.r.t. [`RbfClassifier::params`] over a
/// batch of `(hidden activations, label)` pairs.
pub fn batch_loss_and_grad(
    classifier: &RbfClassifier,
    batch: &[(&[f64], usize)],
    alpha: &[f64],
    gamma: f64,
) -> (f64, Vec<f64>) {
    let n_in = classifier.input_dim();
    let l = classifier.outputs;
    let mut grad = vec![0.0; l * n_in + l];
    let mut dz = vec![0.0; l];
    let mut loss = 0.0;
    for &(h, y) in batch {
        let probs = softmax(&classifier.logits_from_hidden(h));
        loss += focal_mce_loss(&probs, PseudoLabel(y), alpha, gamma).expect("labels validated");
        focal_logit_grad(&probs, y, alpha[y], gamma, &mut dz);
        for (k, &g) in dz.iter().enumerate() {
            let row = &mut grad[k * n_in..(k + 1) * n_in];
            for (gw, hv) in row.iter_mut().zip(h) {
                *gw += g * hv;
            }
            grad[l * n_in + k] += g;
        }
    }
    let n = batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Mean focal loss over raw feature rows.
pub fn mean_focal_loss(
    classifier: &RbfClassifier,
    data: &LabeledSet,
    alpha: &[f64],
    gamma: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let probs = forward(&data.features.row_f64(i), classifier)?;
        total += focal_mce_loss(&probs, data.labels[i], alpha, gamma)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Grows the head to the registry size. Old weights, biases and widths are
/// copied bit for bit; new entries follow `init`.
pub fn expand_outputs(
    classifier: &RbfClassifier,
    registry: &ClusterRegistry,
    seed: u64,
) -> Result<RbfClassifier> {
    expand_outputs_with(classifier, registry, seed, ExpandInit::Uniform)
}

pub fn expand_outputs_with(
    classifier: &RbfClassifier,
    registry: &ClusterRegistry,
    seed: u64,
    init: ExpandInit,
) -> Result<RbfClassifier> {
    if registry.dim() != classifier.dim {
        return Err(Error::DimensionMismatch {
            expected: classifier.dim,
            got: registry.dim(),
        });
    }
    let old_l = classifier.outputs;
    let new_l = registry.len();
    if new_l <= old_l {
        return Err(Error::InvalidArgument(format!(
            "registry has {new_l} clusters, head already has {old_l} outputs"
        )));
    }
    let mut next = classifier.clone();
    next.outputs = new_l;
    next.centers = registry.centers().to_vec();
    next.widths = classifier.widths.clone();
    next.widths.extend_from_slice(&registry.widths()[old_l..]);
    next.seed = seed;
    next.history.clear();
    next.best_epoch = None;

    let old_in = classifier.input_dim();
    let new_in = next.input_dim();
    let bound = 1.0 / (new_l as f64).sqrt();
    let mut rng = rng::seeded(seed);
    let mut draw = || match init {
        ExpandInit::Uniform => rng.gen_range(-bound..bound),
        ExpandInit::Zero => 0.0,
    };

    let mut weights = Vec::with_capacity(new_l * new_in);
    for k in 0..new_l {
        for j in 0..new_in {
            if k < old_l && j < old_in {
                weights.push(classifier.weights[k * old_in + j]);
            } else {
                weights.push(draw());
            }
        }
    }
    let mut biases = classifier.biases.clone();
    biases.extend((old_l..new_l).map(|_| draw()));
    next.weights = weights;
    next.biases = biases;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            learning_rate: 0.001,
            gamma: 2.0,
            seed: 0,
        }
    }
}

/// Trains the linear layer on the shuffled union of `new_data` and `replay`
/// and returns the parameters from the epoch with the lowest mean loss.
///
/// The epoch loss is the mean focal loss over the whole union, measured with
/// the parameters at the end of that epoch. Centers and widths stay fixed.
pub fn train_task(
    classifier: &RbfClassifier,
    new_data: &LabeledSet,
    replay: &LabeledSet,
    config: &TrainConfig,
) -> Result<RbfClassifier> {
    if config.batch_size == 0
        || config.learning_rate.is_nan()
        || config.learning_rate <= 0.0
        || config.gamma.is_nan()
        || config.gamma < 0.0
    {
        return Err(Error::Config(format!("invalid train config {config:?}")));
    }
    let l = classifier.outputs;
    let union: Vec<(Vec<f64>, usize)> = [new_data, replay]
        .iter()
        .flat_map(|set| (0..set.len()).map(move |i| (set, i)))
        .map(|(set, i)| {
            let y = set.labels[i].0;
            if y >= l {
                return Err(Error::LabelOutOfRange { label: y, size: l });
            }
            Ok((classifier.hidden(&set.features.row_f64(i))?, y))
        })
        .collect::<Result<_>>()?;
    if union.is_empty() {
        return Err(Error::InvalidArgument("no training data".into()));
    }

    let mut counts = vec![0usize; l];
    union.iter().for_each(|(_, y)| counts[*y] += 1);
    let alpha = compute_alpha_weights(&counts)?;

    let mut current = classifier.clone();
    current.history.clear();
    current.best_epoch = None;
    let mut best = current.clone();
    let mut best_loss = f64::INFINITY;
    let mut params = current.params();
    let mut adam = AdamState::new(params.len());
    let mut rng = rng::seeded(config.seed);
    let mut order: Vec<usize> = (0..union.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (union[i].0.as_slice(), union[i].1))
                .collect();
            let (_, grad) = batch_loss_and_grad(&current, &batch, &alpha, config.gamma);
            adam_step(&mut params, &grad, &mut adam, config.learning_rate)?;
            current.set_params(&params)?;
        }
        let all: Vec<(&[f64], usize)> = union.iter().map(|(h, y)| (h.as_slice(), *y)).collect();
        let (loss, _) = batch_loss_and_grad(&current, &all, &alpha, config.gamma);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch} loss is {loss}")));
        }
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = current.clone();
            best.best_epoch = Some(epoch);
        }
    }
    best.history = history;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSet;

    fn registry(centers: &[f64], dim: usize, widths: &[f64]) -> ClusterRegistry {
        ClusterRegistry::from_centers(dim, centers.to_vec(), widths.to_vec()).unwrap()
    }

    fn head(centers: &[f64], dim: usize, widths: &[f64]) -> RbfClassifier {
        expand_outputs(
            &RbfClassifier::new(dim, HeadMode::Rbf),
            &registry(centers, dim, widths),
            1,
        )
        .unwrap()
    }

    #[test]
    fn activation_closed_forms() {
        let clf = head(&[0.0, 0.0, 3.0, 4.0], 2, &[1.0, 5.0]);
        let a = rbf_activations(&[0.0, 0.0], &clf).unwrap();
        assert_eq!(a[0], 1.0);
        // |x - mu_1| = 5 = sigma_1
        assert!((a[1] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((a[1] - 0.60653).abs() < 1e-5);
        assert!(rbf_activations(&[0.0], &clf).is_err());
    }

    #[test]
    fn zero_weights_give_uniform() {
        let clf = head(&[0.0, 1.0, 2.0], 1, &[1.0; 3]);
        let zero = RbfClassifier::from_parts(
            HeadMode::Rbf,
            1,
            vec![0.0, 1.0, 2.0],
            vec![1.0; 3],
            vec![0.0; 9],
            vec![0.0; 3],
        )
        .unwrap();
        for p in forward(&[0.7], &zero).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s: f64 = forward(&[0.3], &clf).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equal_logits_split_evenly() {
        for z in [-50.0, 0.0, 3.5, 700.0] {
            assert_eq!(softmax(&[z, z]), vec![0.5, 0.5]);
        }
    }

    #[test]
    fn focal_closed_forms() {
        let a = [1.0, 1.0];
        assert_eq!(
            focal_mce_loss(&[1.0, 0.0], PseudoLabel(0), &a, 2.0).unwrap(),
            0.0
        );
        let v = focal_mce_loss(&[0.5, 0.5], PseudoLabel(0), &a, 2.0).unwrap();
        assert!((v - 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 0.173287).abs() < 1e-6);
        let p = 0.3;
        let v = focal_mce_loss(&[p, 1.0 - p], PseudoLabel(0), &a, 0.0).unwrap();
        assert!((v + p.ln()).abs() < 1e-12);
        let v = focal_mce_loss(&[0.0, 1.0], PseudoLabel(0), &a, 2.0).unwrap();
        assert!(v.is_finite() && v > 0.0);
        assert!(focal_mce_loss(&[0.5, 0.5], PseudoLabel(2), &a, 2.0).is_err());
    }

    #[test]
    fn alpha_weights() {
        assert_eq!(compute_alpha_weights(&[10, 10]).unwrap(), vec![1.0, 1.0]);
        let a = compute_alpha_weights(&[30, 10]).unwrap();
        assert!((a[0] - 40.0 / 60.0).abs() < 1e-15 && a[1] == 2.0);
        assert_eq!(compute_alpha_weights(&[0, 20]).unwrap(), vec![10.0, 0.5]);
        assert!(compute_alpha_weights(&[0, 0]).is_err());
    }

    #[test]
    fn expansion_copies_old_block() {
        let reg5 = registry(&[0.0, 1.0, 2.0, 3.0, 4.0], 1, &[1.0; 5]);
        let small = expand_outputs(&RbfClassifier::new(1, HeadMode::Rbf), &reg5, 3).unwrap();
        let reg10 = registry(&(0..10).map(f64::from).collect::<Vec<_>>(), 1, &[1.0; 10]);
        let big = expand_outputs(&small, &reg10, 4).unwrap();
        assert_eq!(big.weights().len(), 100);
        for k in 0..5 {
            for j in 0..5 {
                assert_eq!(
                    big.weights()[k * 10 + j].to_bits(),
                    small.weights()[k * 5 + j].to_bits()
                );
            }
        }
        assert_eq!(&big.biases()[..5], small.biases());
        assert!(expand_outputs(&big, &reg10, 5).is_err());
    }

    #[test]
    fn zero_init_keeps_old_logits() {
        let reg5 = registry(&[0.0, 1.0, 2.0, 3.0, 4.0], 1, &[1.0; 5]);
        let small = expand_outputs(&RbfClassifier::new(1, HeadMode::Rbf), &reg5, 3).unwrap();
        let reg10 = registry(&(0..10).map(f64::from).collect::<Vec<_>>(), 1, &[1.0; 10]);
        let big = expand_outputs_with(&small, &reg10, 4, ExpandInit::Zero).unwrap();
        for x in [0.0, 1.5, 3.9] {
            let a = small.logits(&[x]).unwrap();
            let b = big.logits(&[x]).unwrap();
            for k in 0..5 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn adam_closed_forms() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.001).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.t, 1);

        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.001).unwrap();
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut s, 0.001).is_err());
    }

    #[test]
    fn adam_descends_quadratic() {
        let target = [3.0, -1.0, 0.5];
        let f = |p: &[f64]| {
            p.iter()
                .zip(target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        let mut p = vec![0.0; 3];
        let start = f(&p);
        let mut s = AdamState::new(3);
        for _ in 0..100 {
            let g: Vec<f64> = p.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect();
            adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        }
        assert!(f(&p) < start);
    }

    fn two_cluster_data() -> (ClusterRegistry, LabeledSet) {
        let reg = registry(&[0.0, 0.0, 5.0, 5.0], 2, &[1.0, 1.0]);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.05;
            data.extend([t - 0.5, 0.3 - t]);
            labels.push(PseudoLabel(0));
            data.extend([5.0 + t - 0.5, 5.0 - t]);
            labels.push(PseudoLabel(1));
        }
        let ids = (0..40).map(|i| format!("x{i}")).collect();
        let set = FeatureSet::from_f64(2, &data, ids).unwrap();
        (reg, LabeledSet::new(set, labels).unwrap())
    }

    #[test]
    fn separable_training_reaches_full_accuracy() {
        let (reg, data) = two_cluster_data();
        let clf = expand_outputs(&RbfClassifier::new(2, HeadMode::Rbf), &reg, 7).unwrap();
        let empty = LabeledSet::new(FeatureSet::empty(2).unwrap(), vec![]).unwrap();
        let cfg = TrainConfig {
            seed: 1,
            ..Default::default()
        };
        let trained = train_task(&clf, &data, &empty, &cfg).unwrap();
        let correct = (0..data.len())
            .filter(|&i| predict(&data.features.row_f64(i), &trained).unwrap() == data.labels[i])
            .count();
        assert_eq!(correct, data.len());
        assert_eq!(trained.history().len(), 50);
        let best = trained.best_epoch().unwrap();
        let kept = trained.history()[best - 1];
        assert!(trained.history().iter().all(|&l| kept <= l));
        // registry untouched
        assert_eq!(reg.centers(), &[0.0, 0.0, 5.0, 5.0]);

        let again = train_task(&clf, &data, &empty, &cfg).unwrap();
        assert_eq!(
            again
                .params()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            trained
                .params()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_epochs_returns_initial() {
        let (reg, data) = two_cluster_data();
        let clf = expand_outputs(&RbfClassifier::new(2, HeadMode::Rbf), &reg, 7).unwrap();
        let empty = LabeledSet::new(FeatureSet::empty(2).unwrap(), vec![]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train_task(&clf, &data, &empty, &cfg).unwrap();
        assert_eq!(out.params(), clf.params());
        assert!(train_task(&clf, &empty, &empty, &cfg).is_err());
        let bad = LabeledSet::new(data.features.clone(), vec![PseudoLabel(9); 40]).unwrap();
        assert!(matches!(
            train_task(&clf, &bad, &empty, &cfg),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn predict_ties_and_argmax() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
    }

    #[test]
    fn identity_head_shapes() {
        let reg = registry(&[0.0, 0.0, 5.0, 5.0], 2, &[1.0, 1.0]);
        let clf = expand_outputs(&RbfClassifier::new(2, HeadMode::Identity), &reg, 1).unwrap();
        assert_eq!(clf.input_dim(), 2);
        assert_eq!(clf.weights().len(), 4);
        assert_eq!(forward(&[1.0, 1.0], &clf).unwrap().len(), 2);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (reg, _) = two_cluster_data();
        let clf = expand_outputs(&RbfClassifier::new(2, HeadMode::Rbf), &reg, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        clf.save(dir.path()).unwrap();
        let back = RbfClassifier::load(dir.path(), &reg).unwrap();
        assert_eq!(back.outputs(), 2);
        for (a, b) in back.params().iter().zip(clf.params()) {
            assert_eq!(*a, b as f32 as f64);
        }
    }
}
