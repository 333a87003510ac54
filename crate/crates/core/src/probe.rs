//! Membership probes over token feature sequences.
//!
//! Three probe families share one training loop: a linear probe and an MLP
//! acting on mean-pooled features, and an attention-pooling probe whose
//! learnable query re-weights tokens before the linear read-out. Training
//! minimizes mean binary cross-entropy with Adam updates in a deterministic
//! batch order, keeping the checkpoint with the best validation AUC.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval;
use crate::model::{Label, LabeledDataset};
use crate::rng::seeded;
use crate::stats::dot;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("sequence {id} has no tokens")]
    EmptySequence { id: String },
    #[error("sequence {id}: token {token} has dim {got}, expected {expected}")]
    TokenDim {
        id: String,
        token: usize,
        got: usize,
        expected: usize,
    },
    #[error("sequence {id} contains a non-finite value")]
    NonFinite { id: String },
    #[error("sequence {id} has dim {got}, model expects {expected}")]
    DimMismatch {
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("sequence {id} is unlabeled")]
    Unlabeled { id: String },
    #[error("{which} set needs both classes ({n_pos} members, {n_neg} non-members)")]
    SingleClass {
        which: &'static str,
        n_pos: usize,
        n_neg: usize,
    },
    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("{0}")]
    BadParam(String),
    #[error("bad model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered token feature vectors for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenFeatureSequence {
    pub id: String,
    pub tokens: Vec<Vec<f64>>,
    pub label: Option<Label>,
}

impl TokenFeatureSequence {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<Vec<f64>>,
        label: Option<Label>,
    ) -> Result<TokenFeatureSequence, ProbeError> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(ProbeError::EmptySequence { id });
        }
        let dim = tokens[0].len();
        if dim == 0 {
            return Err(ProbeError::TokenDim {
                id,
                token: 0,
                got: 0,
                expected: 1,
            });
        }
        for (i, t) in tokens.iter().enumerate() {
            if t.len() != dim {
                return Err(ProbeError::TokenDim {
                    id,
                    token: i,
                    got: t.len(),
                    expected: dim,
                });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(ProbeError::NonFinite { id });
            }
        }
        Ok(TokenFeatureSequence { id, tokens, label })
    }

    pub fn dim(&self) -> usize {
        self.tokens[0].len()
    }
}

/// Wrap fixed-size embedding rows as single-token sequences, attaching
/// labels where available.
pub fn sequences_from_embeddings(
    space: &crate::model::EmbeddingSpace,
    labels: Option<&LabeledDataset>,
) -> Vec<TokenFeatureSequence> {
    space
        .iter()
        .map(|(id, row)| TokenFeatureSequence {
            id: id.to_string(),
            tokens: vec![row.to_vec()],
            label: labels.and_then(|l| l.get(id)),
        })
        .collect()
}

/// Arithmetic mean over tokens.
pub fn mean_pool(seq: &TokenFeatureSequence) -> Vec<f64> {
    let dim = seq.dim();
    let mut out = vec![0.0; dim];
    for token in &seq.tokens {
        for (o, v) in out.iter_mut().zip(token) {
            *o += v;
        }
    }
    let n = seq.tokens.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    out
}

/// Numerically stable softmax (max-logit subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Attention pooling: weights `softmax_j(q . h_j)`, pooled `sum_j a_j h_j`.
pub fn attention_pool(seq: &TokenFeatureSequence, query: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = seq.tokens.iter().map(|h| dot(query, h)).collect();
    let weights = softmax(&logits);
    let mut pooled = vec![0.0; seq.dim()];
    for (a, token) in weights.iter().zip(&seq.tokens) {
        for (p, v) in pooled.iter_mut().zip(token) {
            *p += a * v;
        }
    }
    (pooled, weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Linear,
    Mlp,
    AttentionPool,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Linear => "linear",
            ProbeKind::Mlp => "mlp",
            ProbeKind::AttentionPool => "attention_pool",
        }
    }
}

impl std::str::FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ProbeKind::Linear),
            "mlp" => Ok(ProbeKind::Mlp),
            "attention" | "attention_pool" => Ok(ProbeKind::AttentionPool),
            other => Err(format!("unknown probe kind `{other}`")),
        }
    }
}

/// A probe with its parameters stored flat; the layout depends on the kind:
///
/// * linear:         `[w (d) | b]`
/// * mlp:            `[W1 (h*d, row-major) | b1 (h) | w2 (h) | b2]`
/// * attention_pool: `[q (d) | w (d) | b]`
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    pub input_dim: usize,
    pub hidden_width: usize,
    params: Vec<f64>,
}

impl ProbeModel {
    fn param_len(kind: ProbeKind, dim: usize, hidden: usize) -> usize {
        match kind {
            ProbeKind::Linear => dim + 1,
            ProbeKind::Mlp => hidden * dim + hidden + hidden + 1,
            ProbeKind::AttentionPool => 2 * dim + 1,
        }
    }

    pub fn zeroed(kind: ProbeKind, input_dim: usize, hidden_width: usize) -> ProbeModel {
        ProbeModel {
            kind,
            input_dim,
            hidden_width,
            params: vec![0.0; Self::param_len(kind, input_dim, hidden_width)],
        }
    }

    /// Seeded initialization: weights uniform in `(-1/sqrt(fan_in), +1/sqrt(fan_in))`,
    /// biases zero, and the attention query zero so the probe starts out as
    /// mean pooling.
    pub fn init(kind: ProbeKind, input_dim: usize, hidden_width: usize, seed: u64) -> ProbeModel {
        let mut model = Self::zeroed(kind, input_dim, hidden_width);
        let mut rng = seeded(seed);
        let d = input_dim;
        let h = hidden_width;
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in slice {
                *v = rng.gen_range(-bound..bound);
            }
        };
        match kind {
            ProbeKind::Linear => fill(&mut model.params[..d], d),
            ProbeKind::Mlp => {
                fill(&mut model.params[..h * d], d);
                let w2_start = h * d + h;
                fill(&mut model.params[w2_start..w2_start + h], h);
            }
            ProbeKind::AttentionPool => {
                // q stays zero; only the read-out weight is randomized.
                fill(&mut model.params[d..2 * d], d);
            }
        }
        model
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_dim(&self, seq: &TokenFeatureSequence) -> Result<(), ProbeError> {
        if seq.dim() != self.input_dim {
            return Err(ProbeError::DimMismatch {
                id: seq.id.clone(),
                got: seq.dim(),
                expected: self.input_dim,
            });
        }
        Ok(())
    }

    /// Pre-sigmoid logit plus the intermediates backward needs.
    fn forward_cached(&self, seq: &TokenFeatureSequence) -> ForwardCache {
        let d = self.input_dim;
        match self.kind {
            ProbeKind::Linear => {
                let pooled = mean_pool(seq);
                let z = dot(&self.params[..d], &pooled) + self.params[d];
                ForwardCache {
                    logit: z,
                    pooled,
                    attention: None,
                    pre_hidden: None,
                    hidden: None,
                }
            }
            ProbeKind::Mlp => {
                let h = self.hidden_width;
                let pooled = mean_pool(seq);
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                let mut pre = vec![0.0; h];
                for (j, p) in pre.iter_mut().enumerate() {
                    *p = dot(&w1[j * d..(j + 1) * d], &pooled) + b1[j];
                }
                let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
                let z = dot(w2, &act) + b2[0];
                ForwardCache {
                    logit: z,
                    pooled,
                    attention: None,
                    pre_hidden: Some(pre),
                    hidden: Some(act),
                }
            }
            ProbeKind::AttentionPool => {
                let (pooled, weights) = attention_pool(seq, &self.params[..d]);
                let z = dot(&self.params[d..2 * d], &pooled) + self.params[2 * d];
                ForwardCache {
                    logit: z,
                    pooled,
                    attention: Some(weights),
                    pre_hidden: None,
                    hidden: None,
                }
            }
        }
    }

    /// Membership probability in (0, 1).
    pub fn forward(&self, seq: &TokenFeatureSequence) -> Result<f64, ProbeError> {
        self.check_dim(seq)?;
        Ok(sigmoid(self.forward_cached(seq).logit))
    }

    /// Gradient of the sample's binary cross-entropy w.r.t. every parameter,
    /// accumulated into `grad` (scaled by `scale`). Returns the loss.
    fn accumulate_gradient(
        &self,
        seq: &TokenFeatureSequence,
        y: f64,
        grad: &mut [f64],
        scale: f64,
    ) -> f64 {
        let d = self.input_dim;
        let cache = self.forward_cached(seq);
        let z = cache.logit;
        let p = sigmoid(z);
        let dz = (p - y) * scale;
        match self.kind {
            ProbeKind::Linear => {
                for (g, x) in grad[..d].iter_mut().zip(&cache.pooled) {
                    *g += dz * x;
                }
                grad[d] += dz;
            }
            ProbeKind::Mlp => {
                let h = self.hidden_width;
                let pre = cache.pre_hidden.as_ref().expect("mlp cache");
                let act = cache.hidden.as_ref().expect("mlp cache");
                let w2 = &self.params[h * d + h..h * d + h + h];
                // Output layer.
                for (g, a) in grad[h * d + h..h * d + h + h].iter_mut().zip(act) {
                    *g += dz * a;
                }
                grad[h * d + h + h] += dz;
                // Hidden layer through the ReLU mask.
                for j in 0..h {
                    if pre[j] > 0.0 {
                        let dpre = dz * w2[j];
                        for (g, x) in grad[j * d..(j + 1) * d].iter_mut().zip(&cache.pooled) {
                            *g += dpre * x;
                        }
                        grad[h * d + j] += dpre;
                    }
                }
            }
            ProbeKind::AttentionPool => {
                let weights = cache.attention.as_ref().expect("attention cache");
                let w = &self.params[d..2 * d];
                for (g, hbar) in grad[d..2 * d].iter_mut().zip(&cache.pooled) {
                    *g += dz * hbar;
                }
                grad[2 * d] += dz;
                // d(loss)/d(alpha_j) = dz * w . h_j, then through softmax.
                let dalpha: Vec<f64> = seq.tokens.iter().map(|t| dz * dot(w, t)).collect();
                let mix: f64 = weights.iter().zip(&dalpha).map(|(a, da)| a * da).sum();
                for (j, token) in seq.tokens.iter().enumerate() {
                    let ds = weights[j] * (dalpha[j] - mix);
                    for (g, x) in grad[..d].iter_mut().zip(token) {
                        *g += ds * x;
                    }
                }
            }
        }
        bce_from_logit(z, y)
    }

    /// Mean BCE over a pack of labeled sequences at the current parameters.
    fn mean_loss(&self, samples: &[(&TokenFeatureSequence, f64)]) -> f64 {
        let total: f64 = samples
            .iter()
            .map(|(seq, y)| bce_from_logit(self.forward_cached(seq).logit, *y))
            .sum();
        total / samples.len() as f64
    }
}

struct ForwardCache {
    logit: f64,
    pooled: Vec<f64>,
    attention: Option<Vec<f64>>,
    pre_hidden: Option<Vec<f64>>,
    hidden: Option<Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy computed from the logit:
/// `softplus(z) - y*z`, stable for large |z|.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

/// Probabilities for a batch of sequences.
pub fn predict(model: &ProbeModel, seqs: &[TokenFeatureSequence]) -> Result<Vec<f64>, ProbeError> {
    seqs.par_iter().map(|s| model.forward(s)).collect()
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation-AUC improvement.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden_width: 128,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub seed: u64,
    pub hyperparams: Hyperparams,
}

fn labeled<'a>(
    data: &'a [TokenFeatureSequence],
    which: &'static str,
) -> Result<Vec<(&'a TokenFeatureSequence, f64)>, ProbeError> {
    let mut out = Vec::with_capacity(data.len());
    let mut n_pos = 0usize;
    for seq in data {
        let label = seq
            .label
            .ok_or_else(|| ProbeError::Unlabeled { id: seq.id.clone() })?;
        if label == Label::Member {
            n_pos += 1;
        }
        out.push((seq, label.as_u8() as f64));
    }
    if n_pos == 0 || n_pos == out.len() {
        return Err(ProbeError::SingleClass {
            which,
            n_pos,
            n_neg: out.len() - n_pos,
        });
    }
    Ok(out)
}

/// Stratified 80/20-style split by seeded shuffle within each class, so both
/// sides keep both classes.
pub fn split_train_val(
    data: &[TokenFeatureSequence],
    val_fraction: f64,
    seed: u64,
) -> (Vec<TokenFeatureSequence>, Vec<TokenFeatureSequence>) {
    let mut rng = seeded(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [Label::NonMember, Label::Member] {
        let mut members: Vec<&TokenFeatureSequence> =
            data.iter().filter(|s| s.label == Some(class)).collect();
        members.shuffle(&mut rng);
        let n_val = ((members.len() as f64) * val_fraction).round() as usize;
        let n_val = n_val.clamp(
            usize::from(members.len() > 1),
            members.len().saturating_sub(1),
        );
        for (i, seq) in members.into_iter().enumerate() {
            if i < n_val {
                val.push(seq.clone());
            } else {
                train.push(seq.clone());
            }
        }
    }
    let unlabeled = data.iter().filter(|s| s.label.is_none());
    train.extend(unlabeled.cloned());
    (train, val)
}

/// Train a probe by mini-batch Adam on mean binary cross-entropy, returning
/// the checkpoint with the best validation AUC. Deterministic for a fixed
/// (data, hyperparams, seed).
pub fn train_probe(
    train: &[TokenFeatureSequence],
    val: &[TokenFeatureSequence],
    kind: ProbeKind,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<(ProbeModel, TrainReport), ProbeError> {
    if hyper.batch_size == 0 || hyper.max_epochs == 0 {
        return Err(ProbeError::BadParam(
            "batch_size and max_epochs must be >= 1".into(),
        ));
    }
    let train_set = labeled(train, "training")?;
    let val_set = labeled(val, "validation")?;
    let dim = train_set[0].0.dim();
    for (seq, _) in train_set.iter().chain(val_set.iter()) {
        if seq.dim() != dim {
            return Err(ProbeError::DimMismatch {
                id: seq.id.clone(),
                got: seq.dim(),
                expected: dim,
            });
        }
    }

    let mut model = ProbeModel::init(kind, dim, hyper.hidden_width, seed);
    let n_params = model.params.len();
    let mut adam_m = vec![0.0; n_params];
    let mut adam_v = vec![0.0; n_params];
    let mut adam_t = 0u32;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = seeded(crate::rng::child_seed(seed, 1));

    let mut best: Option<(ProbeModel, usize, f64)> = None;
    let mut epochs = Vec::new();
    let mut since_best = 0usize;

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, batch) in order.chunks(hyper.batch_size).enumerate() {
            let mut grad = vec![0.0; n_params];
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (seq, y) = train_set[i];
                batch_loss += model.accumulate_gradient(seq, y, &mut grad, scale);
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(ProbeError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += batch_loss;
            batches += 1;

            adam_t += 1;
            let bc1 = 1.0 - hyper.beta1.powi(adam_t as i32);
            let bc2 = 1.0 - hyper.beta2.powi(adam_t as i32);
            for i in 0..n_params {
                adam_m[i] = hyper.beta1 * adam_m[i] + (1.0 - hyper.beta1) * grad[i];
                adam_v[i] = hyper.beta2 * adam_v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
                let m_hat = adam_m[i] / bc1;
                let v_hat = adam_v[i] / bc2;
                model.params[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.adam_eps);
            }
        }
        let train_loss = epoch_loss / batches as f64;
        let val_loss = model.mean_loss(&val_set);
        if !val_loss.is_finite() {
            return Err(ProbeError::NanLoss { epoch, batch: 0 });
        }
        let (pos, neg): (Vec<_>, Vec<_>) = val_set.iter().partition(|(_, y)| *y == 1.0);
        let pos_scores: Vec<f64> = pos
            .iter()
            .map(|(s, _)| sigmoid(model.forward_cached(s).logit))
            .collect();
        let neg_scores: Vec<f64> = neg
            .iter()
            .map(|(s, _)| sigmoid(model.forward_cached(s).logit))
            .collect();
        let val_auc = eval::roc_auc(&pos_scores, &neg_scores)
            .expect("validation set was checked for both classes");
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_auc,
        });

        let improved = best.as_ref().is_none_or(|(_, _, b)| val_auc > *b);
        if improved {
            best = Some((model.clone(), epoch, val_auc));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }

    let (best_model, best_epoch, best_val_auc) = best.expect("at least one epoch ran");
    Ok((
        best_model,
        TrainReport {
            epochs,
            best_epoch,
            best_val_auc,
            seed,
            hyperparams: hyper.clone(),
        },
    ))
}

// ---------------------------------------------------------------------------
// Gradient checking

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Compare analytic gradients of the mean BCE over `samples` against central
/// finite differences at step `eps`. Relative error uses a 1e-6 floor on the
/// denominator so vanishing gradients do not blow it up.
pub fn grad_check(
    model: &ProbeModel,
    samples: &[(TokenFeatureSequence, Label)],
    eps: f64,
) -> Result<GradCheckReport, ProbeError> {
    if samples.is_empty() {
        return Err(ProbeError::BadParam("grad check needs samples".into()));
    }
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(ProbeError::BadParam(format!(
            "eps must be in [1e-6, 1e-3], got {eps}"
        )));
    }
    for (seq, _) in samples {
        model.check_dim(seq)?;
    }
    let packed: Vec<(&TokenFeatureSequence, f64)> =
        samples.iter().map(|(s, l)| (s, l.as_u8() as f64)).collect();

    let n_params = model.params.len();
    let mut analytic = vec![0.0; n_params];
    let scale = 1.0 / packed.len() as f64;
    for (seq, y) in &packed {
        model.accumulate_gradient(seq, *y, &mut analytic, scale);
    }

    let mut perturbed = model.clone();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for (i, &grad) in analytic.iter().enumerate() {
        let original = perturbed.params[i];
        perturbed.params[i] = original + eps;
        let plus = perturbed.mean_loss(&packed);
        perturbed.params[i] = original - eps;
        let minus = perturbed.mean_loss(&packed);
        perturbed.params[i] = original;
        let fd = (plus - minus) / (2.0 * eps);
        let abs = (grad - fd).abs();
        let rel = abs / grad.abs().max(fd.abs()).max(1e-6);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
    })
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    kind: ProbeKind,
    input_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_width: Option<usize>,
    params: BTreeMap<String, Vec<f64>>,
}

impl ProbeModel {
    pub fn to_json(&self) -> serde_json::Value {
        let d = self.input_dim;
        let h = self.hidden_width;
        let mut params = BTreeMap::new();
        match self.kind {
            ProbeKind::Linear => {
                params.insert("w".to_string(), self.params[..d].to_vec());
                params.insert("b".to_string(), vec![self.params[d]]);
            }
            ProbeKind::Mlp => {
                params.insert("w1".to_string(), self.params[..h * d].to_vec());
                params.insert("b1".to_string(), self.params[h * d..h * d + h].to_vec());
                params.insert(
                    "w2".to_string(),
                    self.params[h * d + h..h * d + 2 * h].to_vec(),
                );
                params.insert("b2".to_string(), vec![self.params[h * d + 2 * h]]);
            }
            ProbeKind::AttentionPool => {
                params.insert("q".to_string(), self.params[..d].to_vec());
                params.insert("w".to_string(), self.params[d..2 * d].to_vec());
                params.insert("b".to_string(), vec![self.params[2 * d]]);
            }
        }
        serde_json::to_value(ModelRecord {
            kind: self.kind,
            input_dim: self.input_dim,
            hidden_width: (self.kind == ProbeKind::Mlp).then_some(self.hidden_width),
            params,
        })
        .expect("model serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<ProbeModel, ProbeError> {
        let record: ModelRecord =
            serde_json::from_value(value).map_err(|e| ProbeError::BadModel(e.to_string()))?;
        let d = record.input_dim;
        let h = record.hidden_width.unwrap_or(0);
        let take = |name: &str, len: usize| -> Result<Vec<f64>, ProbeError> {
            let v = record
                .params
                .get(name)
                .ok_or_else(|| ProbeError::BadModel(format!("missing parameter group `{name}`")))?;
            if v.len() != len {
                return Err(ProbeError::BadModel(format!(
                    "parameter group `{name}` has length {}, expected {len}",
                    v.len()
                )));
            }
            Ok(v.clone())
        };
        let mut params = Vec::new();
        match record.kind {
            ProbeKind::Linear => {
                params.extend(take("w", d)?);
                params.extend(take("b", 1)?);
            }
            ProbeKind::Mlp => {
                if h == 0 {
                    return Err(ProbeError::BadModel("mlp needs hidden_width".into()));
                }
                params.extend(take("w1", h * d)?);
                params.extend(take("b1", h)?);
                params.extend(take("w2", h)?);
                params.extend(take("b2", 1)?);
            }
            ProbeKind::AttentionPool => {
                params.extend(take("q", d)?);
                params.extend(take("w", d)?);
                params.extend(take("b", 1)?);
            }
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::BadModel("non-finite parameter".into()));
        }
        Ok(ProbeModel {
            kind: record.kind,
            input_dim: d,
            hidden_width: h,
            params,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), ProbeError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &self.to_json())
            .map_err(|e| ProbeError::BadModel(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<ProbeModel, ProbeError> {
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| ProbeError::BadModel(e.to_string()))?;
        Self::from_json(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn seq(id: &str, tokens: Vec<Vec<f64>>, label: Option<Label>) -> TokenFeatureSequence {
        TokenFeatureSequence::new(id, tokens, label).unwrap()
    }

    #[test]
    fn mean_pool_examples() {
        let single = seq("a", vec![vec![3.0, -1.0]], None);
        assert_eq!(mean_pool(&single), vec![3.0, -1.0]);

        let two = seq("b", vec![vec![0.0, 0.0], vec![2.0, 4.0]], None);
        assert_eq!(mean_pool(&two), vec![1.0, 2.0]);

        let permuted = seq("c", vec![vec![2.0, 4.0], vec![0.0, 0.0]], None);
        assert_eq!(mean_pool(&two), mean_pool(&permuted));
    }

    #[test]
    fn attention_pool_examples() {
        let s = seq("a", vec![vec![1.0, 0.0], vec![0.0, 1.0]], None);
        // Zero query gives uniform weights, i.e. mean pooling.
        let (pooled, weights) = attention_pool(&s, &[0.0, 0.0]);
        assert_eq!(weights, vec![0.5, 0.5]);
        let mp = mean_pool(&s);
        for (a, b) in pooled.iter().zip(&mp) {
            assert!((a - b).abs() < 1e-12);
        }

        let single = seq("b", vec![vec![7.0]], None);
        let (pooled, weights) = attention_pool(&single, &[3.0]);
        assert_eq!(weights, vec![1.0]);
        assert_eq!(pooled, vec![7.0]);

        // Strongly separated logits: weight collapses onto one token.
        let wide = seq("c", vec![vec![10.0], vec![-10.0]], None);
        let (pooled, weights) = attention_pool(&wide, &[1.0]);
        assert!((weights[0] - 1.0).abs() < 1e-8);
        assert!(weights[1] < 1e-8);
        assert!((pooled[0] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn attention_weights_sum_to_one_and_shift_invariant() {
        let logits = [0.3, -1.2, 2.4, 0.0];
        let w = softmax(&logits);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|x| x + 17.25).collect();
        let w2 = softmax(&shifted);
        for (a, b) in w.iter().zip(&w2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_examples() {
        let s = seq("a", vec![vec![0.0, 0.0]], None);
        let zero = ProbeModel::zeroed(ProbeKind::Linear, 2, 0);
        assert_eq!(zero.forward(&s).unwrap(), 0.5);

        let mut linear = ProbeModel::zeroed(ProbeKind::Linear, 1, 0);
        linear.params_mut()[0] = 1.0;
        let at_zero = seq("z", vec![vec![0.0]], None);
        assert_eq!(linear.forward(&at_zero).unwrap(), 0.5);
        let large = seq("l", vec![vec![50.0]], None);
        assert!(linear.forward(&large).unwrap() > 1.0 - 1e-9);

        // Attention probe with q = 0 reduces to the linear probe on the mean.
        let mut attn = ProbeModel::zeroed(ProbeKind::AttentionPool, 2, 0);
        attn.params_mut()[2] = 0.7;
        attn.params_mut()[3] = -0.4;
        attn.params_mut()[4] = 0.1;
        let mut lin = ProbeModel::zeroed(ProbeKind::Linear, 2, 0);
        lin.params_mut()[0] = 0.7;
        lin.params_mut()[1] = -0.4;
        lin.params_mut()[2] = 0.1;
        let s = seq("r", vec![vec![0.2, 1.4], vec![-0.6, 0.8]], None);
        let a = attn.forward(&s).unwrap();
        let b = lin.forward(&s).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn forward_checks_dims() {
        let model = ProbeModel::zeroed(ProbeKind::Linear, 3, 0);
        let s = seq("a", vec![vec![1.0, 2.0]], None);
        assert!(model.forward(&s).is_err());
    }

    fn blobs(n_per_class: usize, gap: f64, dim: usize, seed: u64) -> Vec<TokenFeatureSequence> {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for i in 0..n_per_class * 2 {
            let label = if i < n_per_class {
                Label::Member
            } else {
                Label::NonMember
            };
            let shift = if label == Label::Member { gap } else { 0.0 };
            let token: Vec<f64> = (0..dim)
                .map(|j| noise.sample(&mut rng) + if j == 0 { shift } else { 0.0 })
                .collect();
            out.push(seq(&format!("s{i}"), vec![token], Some(label)));
        }
        out
    }

    #[test]
    fn linear_probe_separates_blobs() {
        let data = blobs(500, 5.0, 2, 3);
        let (train, val) = split_train_val(&data, 0.2, 3);
        let (model, report) =
            train_probe(&train, &val, ProbeKind::Linear, &Hyperparams::default(), 0).unwrap();
        assert!(report.best_val_auc >= 0.99, "auc {}", report.best_val_auc);
        assert_eq!(model.kind, ProbeKind::Linear);
        for stats in &report.epochs {
            assert!(stats.train_loss.is_finite() && stats.val_loss.is_finite());
        }
    }

    #[test]
    fn attention_probe_matches_linear_on_separable_blobs() {
        // The attention probe starts as mean pooling (q = 0) and reaches the
        // same near-perfect separation the linear probe does.
        let data = blobs(500, 5.0, 2, 3);
        let (train, val) = split_train_val(&data, 0.2, 3);
        let (_, report) = train_probe(
            &train,
            &val,
            ProbeKind::AttentionPool,
            &Hyperparams::default(),
            0,
        )
        .unwrap();
        assert!(report.best_val_auc >= 0.99, "auc {}", report.best_val_auc);
    }

    #[test]
    fn randomized_labels_stay_near_chance() {
        let mut data = blobs(500, 5.0, 2, 5);
        // Reassign labels by a seeded coin, decoupling them from geometry.
        let mut rng = seeded(17);
        for s in &mut data {
            s.label = Some(if rng.gen::<bool>() {
                Label::Member
            } else {
                Label::NonMember
            });
        }
        let (train, val) = split_train_val(&data, 0.2, 5);
        let (_, report) =
            train_probe(&train, &val, ProbeKind::Linear, &Hyperparams::default(), 0).unwrap();
        assert!(
            (0.4..=0.6).contains(&report.best_val_auc),
            "auc {}",
            report.best_val_auc
        );
    }

    /// Only token #3 carries signal; pooling dilutes it while attention can
    /// find it through the marker feature.
    fn token_signal_data(n_per_class: usize, seed: u64) -> Vec<TokenFeatureSequence> {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let t = 10;
        let mut out = Vec::new();
        for i in 0..n_per_class * 2 {
            let label = if i % 2 == 0 {
                Label::Member
            } else {
                Label::NonMember
            };
            let y = label.as_u8() as f64;
            let tokens: Vec<Vec<f64>> = (0..t)
                .map(|j| {
                    let marker = if j == 3 { 6.0 } else { 0.0 };
                    let signal = if j == 3 { 2.5 * y } else { 0.0 };
                    vec![
                        marker,
                        signal + noise.sample(&mut rng),
                        noise.sample(&mut rng),
                    ]
                })
                .collect();
            out.push(seq(&format!("s{i}"), tokens, Some(label)));
        }
        out
    }

    #[test]
    fn attention_beats_mean_pool_on_token_signal() {
        let data = token_signal_data(400, 11);
        let (train, val) = split_train_val(&data, 0.2, 11);
        let hyper = Hyperparams::default();
        let (_, linear) = train_probe(&train, &val, ProbeKind::Linear, &hyper, 1).unwrap();
        let (_, attn) = train_probe(&train, &val, ProbeKind::AttentionPool, &hyper, 1).unwrap();
        assert!(
            attn.best_val_auc >= linear.best_val_auc + 0.1,
            "attention {} vs linear {}",
            attn.best_val_auc,
            linear.best_val_auc
        );
    }

    #[test]
    fn training_is_reproducible() {
        let data = blobs(100, 1.0, 3, 9);
        let (train, val) = split_train_val(&data, 0.2, 9);
        let hyper = Hyperparams {
            max_epochs: 8,
            ..Hyperparams::default()
        };
        let (m1, r1) = train_probe(&train, &val, ProbeKind::Mlp, &hyper, 4).unwrap();
        let (m2, r2) = train_probe(&train, &val, ProbeKind::Mlp, &hyper, 4).unwrap();
        assert_eq!(m1, m2);
        for (a, b) in r1.epochs.iter().zip(&r2.epochs) {
            assert!((a.train_loss - b.train_loss).abs() < 1e-9);
            assert!((a.val_loss - b.val_loss).abs() < 1e-9);
            assert!((a.val_auc - b.val_auc).abs() < 1e-9);
        }
    }

    #[test]
    fn train_rejects_single_class() {
        let mut data = blobs(20, 1.0, 2, 1);
        for s in &mut data {
            s.label = Some(Label::Member);
        }
        let err =
            train_probe(&data, &data, ProbeKind::Linear, &Hyperparams::default(), 0).unwrap_err();
        assert!(err.to_string().contains("both classes"));
    }

    #[test]
    fn grad_check_linear_and_mlp() {
        let mut rng = seeded(0);
        let noise = Normal::new(0.0, 1.0).unwrap();
        for kind in [ProbeKind::Linear, ProbeKind::Mlp] {
            let model = ProbeModel::init(kind, 4, 8, 0);
            let samples: Vec<(TokenFeatureSequence, Label)> = (0..3)
                .map(|i| {
                    let tokens: Vec<Vec<f64>> = (0..5)
                        .map(|_| (0..4).map(|_| noise.sample(&mut rng)).collect())
                        .collect();
                    let label = if i % 2 == 0 {
                        Label::Member
                    } else {
                        Label::NonMember
                    };
                    (seq(&format!("g{i}"), tokens, Some(label)), label)
                })
                .collect();
            let report = grad_check(&model, &samples, 1e-5).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{kind:?}: {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn grad_check_attention_instances() {
        let noise = Normal::new(0.0, 1.0).unwrap();
        for instance in 0..5u64 {
            let mut rng = seeded(instance);
            let mut model = ProbeModel::init(ProbeKind::AttentionPool, 3, 0, instance);
            // Randomize the query too so softmax gradients are exercised.
            for v in model.params_mut()[..3].iter_mut() {
                *v = noise.sample(&mut rng);
            }
            let samples: Vec<(TokenFeatureSequence, Label)> = (0..2)
                .map(|i| {
                    let tokens: Vec<Vec<f64>> = (0..6)
                        .map(|_| (0..3).map(|_| noise.sample(&mut rng)).collect())
                        .collect();
                    let label = if i == 0 {
                        Label::Member
                    } else {
                        Label::NonMember
                    };
                    (seq(&format!("a{i}"), tokens, Some(label)), label)
                })
                .collect();
            let report = grad_check(&model, &samples, 1e-5).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "instance {instance}: {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn grad_check_zero_gradient_point() {
        // Zero weights with a balanced pair: gradients cancel exactly.
        let model = ProbeModel::zeroed(ProbeKind::Linear, 2, 0);
        let x = seq("x", vec![vec![0.4, -1.1]], Some(Label::Member));
        let samples = vec![(x.clone(), Label::Member), (x, Label::NonMember)];
        let report = grad_check(&model, &samples, 1e-5).unwrap();
        assert!(report.max_abs_error < 1e-8, "{}", report.max_abs_error);
    }

    #[test]
    fn model_json_roundtrip() {
        for kind in [ProbeKind::Linear, ProbeKind::Mlp, ProbeKind::AttentionPool] {
            let hidden = if kind == ProbeKind::Mlp { 7 } else { 0 };
            let model = ProbeModel::init(kind, 5, hidden, 99);
            let json = model.to_json();
            let back = ProbeModel::from_json(json).unwrap();
            assert_eq!(model, back);
        }
    }
}
