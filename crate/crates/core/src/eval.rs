//! Threshold-free evaluation of membership scores.
//!
//! AUC is the Mann-Whitney statistic with midrank tie handling; TPR at a
//! target FPR sweeps thresholds at observed score values. Set-level
//! inference bootstraps fixed-size sets from each pool and scores the
//! aggregated values.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Label, LabeledDataset, Orientation, ScoreTable};
use crate::rng::child_rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("both classes must be present (got {n_pos} members, {n_neg} non-members)")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("score for id {0} has no label")]
    MissingLabel(String),
    #[error("scores contain a NaN")]
    NanScore,
    #[error("{0}")]
    BadParam(String),
}

/// ROC summary: AUC, TPR at the requested FPR targets, and the full curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    /// Keyed by the decimal form of the FPR target, e.g. `"0.05"`.
    pub tpr_at_fpr: BTreeMap<String, f64>,
    /// `(fpr, tpr)` points from `(0,0)` to `(1,1)`.
    pub curve: Vec<(f64, f64)>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// AUC over the curve of a set-size sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetInferenceCurve {
    pub set_sizes: Vec<usize>,
    pub auc_per_size: Vec<f64>,
    pub n_sets: usize,
    pub seed: u64,
}

fn check_pools(pos: &[f64], neg: &[f64]) -> Result<(), EvalError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::SingleClass {
            n_pos: pos.len(),
            n_neg: neg.len(),
        });
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(EvalError::NanScore);
    }
    Ok(())
}

/// Mann-Whitney AUC with midrank tie handling. Scores are assumed oriented
/// so that higher means member.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64, EvalError> {
    check_pools(pos, neg)?;
    let n_pos = pos.len();
    let n_neg = neg.len();
    let mut combined: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    combined.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < combined.len() {
        let mut j = i;
        while j + 1 < combined.len() && combined[j + 1].0 == combined[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the midrank.
        let midrank = (i + j + 2) as f64 / 2.0;
        for item in &combined[i..=j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Operating points `(fpr, tpr)` for thresholds "positive iff score > t",
/// with t sweeping the distinct observed values from above plus -inf, so the
/// curve runs from `(0,0)` to `(1,1)`.
fn operating_points(pos: &[f64], neg: &[f64]) -> Vec<(f64, f64)> {
    let n_pos = pos.len() as f64;
    let n_neg = neg.len() as f64;
    let mut combined: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    combined.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < combined.len() {
        let mut j = i;
        while j + 1 < combined.len() && combined[j + 1].0 == combined[i].0 {
            j += 1;
        }
        for item in &combined[i..=j] {
            if item.1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n_neg, tp as f64 / n_pos));
        i = j + 1;
    }
    points
}

/// TPR at the best threshold whose FPR stays at or below `target`.
pub fn tpr_at_fpr(pos: &[f64], neg: &[f64], target: f64) -> Result<f64, EvalError> {
    check_pools(pos, neg)?;
    if !(0.0..=1.0).contains(&target) {
        return Err(EvalError::BadParam(format!(
            "FPR target must be in [0, 1], got {target}"
        )));
    }
    let best = operating_points(pos, neg)
        .into_iter()
        .filter(|&(fpr, _)| fpr <= target)
        .map(|(_, tpr)| tpr)
        .fold(0.0f64, f64::max);
    Ok(best)
}

/// Negate scores whose orientation is lower-is-member so that higher always
/// means member downstream.
pub fn orient(scores: impl IntoIterator<Item = f64>, orientation: Orientation) -> Vec<f64> {
    match orientation {
        Orientation::HigherIsMember => scores.into_iter().collect(),
        Orientation::LowerIsMember => scores.into_iter().map(|s| -s).collect(),
    }
}

/// Split a score table into oriented member / non-member pools using the
/// labels. Every scored id must be labeled.
pub fn split_pools(
    table: &ScoreTable,
    labels: &LabeledDataset,
) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (id, &score) in &table.scores {
        match labels.get(id) {
            Some(Label::Member) => pos.push(score),
            Some(Label::NonMember) => neg.push(score),
            None => return Err(EvalError::MissingLabel(id.clone())),
        }
    }
    let pos = orient(pos, table.orientation);
    let neg = orient(neg, table.orientation);
    Ok((pos, neg))
}

/// Full ROC evaluation of a score table against labels.
pub fn evaluate(
    table: &ScoreTable,
    labels: &LabeledDataset,
    targets: &[f64],
) -> Result<RocResult, EvalError> {
    let (pos, neg) = split_pools(table, labels)?;
    evaluate_pools(&pos, &neg, targets)
}

/// ROC evaluation of already-oriented pools.
pub fn evaluate_pools(pos: &[f64], neg: &[f64], targets: &[f64]) -> Result<RocResult, EvalError> {
    let auc = roc_auc(pos, neg)?;
    let curve = operating_points(pos, neg);
    let mut tprs = BTreeMap::new();
    for &t in targets {
        tprs.insert(format!("{t}"), tpr_at_fpr(pos, neg, t)?);
    }
    Ok(RocResult {
        auc,
        tpr_at_fpr: tprs,
        curve,
        n_pos: pos.len(),
        n_neg: neg.len(),
    })
}

/// How a sampled set of per-sample scores collapses to one set score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Aggregator {
    Mean,
    Median,
    /// Trim this fraction from each end before averaging.
    TrimmedMean(f64),
}

impl Aggregator {
    fn apply(self, values: &mut [f64]) -> f64 {
        match self {
            Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregator::Median => {
                values.sort_by(f64::total_cmp);
                let n = values.len();
                if n % 2 == 1 {
                    values[n / 2]
                } else {
                    (values[n / 2 - 1] + values[n / 2]) / 2.0
                }
            }
            Aggregator::TrimmedMean(frac) => {
                values.sort_by(f64::total_cmp);
                let drop = ((values.len() as f64) * frac).floor() as usize;
                let kept = &values[drop..values.len() - drop];
                kept.iter().sum::<f64>() / kept.len() as f64
            }
        }
    }
}

fn bootstrap_pool_scores(
    pool: &[f64],
    set_size: usize,
    n_sets: usize,
    seed: u64,
    stream_offset: u64,
    aggregator: Aggregator,
) -> Vec<f64> {
    (0..n_sets)
        .into_par_iter()
        .map(|i| {
            let mut rng = child_rng(seed, stream_offset + 2 * i as u64);
            let mut set: Vec<f64> = (0..set_size)
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .collect();
            aggregator.apply(&mut set)
        })
        .collect()
}

/// AUC of aggregated set scores: `n_sets` multisets of `set_size` are drawn
/// with replacement, independently from each pool.
pub fn bootstrap_set_auc(
    member: &[f64],
    non_member: &[f64],
    set_size: usize,
    n_sets: usize,
    seed: u64,
    aggregator: Aggregator,
) -> Result<f64, EvalError> {
    check_pools(member, non_member)?;
    if set_size == 0 {
        return Err(EvalError::BadParam("set size must be >= 1".into()));
    }
    if n_sets == 0 {
        return Err(EvalError::BadParam("n_sets must be >= 1".into()));
    }
    let pos = bootstrap_pool_scores(member, set_size, n_sets, seed, 0, aggregator);
    let neg = bootstrap_pool_scores(non_member, set_size, n_sets, seed, 1, aggregator);
    roc_auc(&pos, &neg)
}

/// Default set sizes for the sweep.
pub const DEFAULT_SET_SIZES: [usize; 7] = [1, 2, 5, 10, 20, 50, 100];

/// Map [`bootstrap_set_auc`] over a list of set sizes.
pub fn sweep_set_sizes(
    member: &[f64],
    non_member: &[f64],
    sizes: &[usize],
    n_sets: usize,
    seed: u64,
    aggregator: Aggregator,
) -> Result<SetInferenceCurve, EvalError> {
    if sizes.is_empty() {
        return Err(EvalError::BadParam("no set sizes given".into()));
    }
    let mut aucs = Vec::with_capacity(sizes.len());
    for (i, &m) in sizes.iter().enumerate() {
        aucs.push(bootstrap_set_auc(
            member,
            non_member,
            m,
            n_sets,
            crate::rng::child_seed(seed, i as u64),
            aggregator,
        )?);
    }
    Ok(SetInferenceCurve {
        set_sizes: sizes.to_vec(),
        auc_per_size: aucs,
        n_sets,
        seed,
    })
}
