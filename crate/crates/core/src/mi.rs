//! Per-sample membership-inference statistics over generation traces.
//!
//! Each method maps one trace (after segment filtering) to a real score and
//! declares the direction in which the score indicates membership. Scoring
//! never calibrates thresholds; evaluation is threshold-free downstream.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{GenerationTrace, Orientation, ScoreTable, SegmentFilter, TokenStep};
use crate::stats::cosine_similarity;

#[derive(Debug, Error)]
pub enum MiError {
    #[error("no steps left after segment filtering")]
    EmptyFilteredTrace,
    #[error("step {step} missing field {field}")]
    MissingField { step: usize, field: &'static str },
    #[error("step {step} missing renyi entropy for alpha={alpha}")]
    MissingRenyi { step: usize, alpha: f64 },
    #[error("step {step} needs the full distribution")]
    NeedsFullMode { step: usize },
    #[error("{0}")]
    BadParam(String),
    #[error("image-only consistency needs at least 2 traces, got {0}")]
    TooFewTraces(usize),
    #[error("all description segments are empty")]
    EmptyDescriptions,
    #[error("trace {id}: {source}")]
    Trace {
        id: String,
        #[source]
        source: Box<MiError>,
    },
}

/// Method selector with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum MiMethod {
    Perplexity,
    MinK { k_percent: f64 },
    MinKpp { k_percent: f64 },
    MaxProbGap,
    MaxRenyiK { alpha: f64, k_percent: f64 },
    ModRenyi { alpha: f64 },
    ImageOnlyConsistency,
}

impl MiMethod {
    pub fn name(&self) -> &'static str {
        match self {
            MiMethod::Perplexity => "perplexity",
            MiMethod::MinK { .. } => "min_k",
            MiMethod::MinKpp { .. } => "min_kpp",
            MiMethod::MaxProbGap => "max_prob_gap",
            MiMethod::MaxRenyiK { .. } => "max_renyi_k",
            MiMethod::ModRenyi { .. } => "mod_renyi",
            MiMethod::ImageOnlyConsistency => "image_consistency",
        }
    }

    /// Fixed per method; evaluation consumes this instead of flipping AUCs,
    /// so inverted separations stay visible as AUCs below 0.5.
    pub fn orientation(&self) -> Orientation {
        match self {
            MiMethod::Perplexity => Orientation::LowerIsMember,
            _ => Orientation::HigherIsMember,
        }
    }

    fn validate(&self) -> Result<(), MiError> {
        let check_k = |k: f64| {
            if !(k > 0.0 && k <= 100.0) {
                Err(MiError::BadParam(format!(
                    "k_percent must be in (0, 100], got {k}"
                )))
            } else {
                Ok(())
            }
        };
        let check_alpha = |a: f64| {
            if a > 0.0 {
                Ok(())
            } else {
                Err(MiError::BadParam(format!("alpha must be > 0, got {a}")))
            }
        };
        match *self {
            MiMethod::MinK { k_percent } | MiMethod::MinKpp { k_percent } => check_k(k_percent),
            MiMethod::MaxRenyiK { alpha, k_percent } => {
                check_alpha(alpha)?;
                check_k(k_percent)
            }
            MiMethod::ModRenyi { alpha } => check_alpha(alpha),
            _ => Ok(()),
        }
    }

    pub fn params(&self) -> BTreeMap<String, serde_json::Value> {
        let mut map = BTreeMap::new();
        match *self {
            MiMethod::MinK { k_percent } | MiMethod::MinKpp { k_percent } => {
                map.insert("k_percent".into(), k_percent.into());
            }
            MiMethod::MaxRenyiK { alpha, k_percent } => {
                map.insert("alpha".into(), alpha.into());
                map.insert("k_percent".into(), k_percent.into());
            }
            MiMethod::ModRenyi { alpha } => {
                map.insert("alpha".into(), alpha.into());
            }
            _ => {}
        }
        map
    }
}

/// Rényi entropy of a distribution given as natural-log probabilities.
///
/// `alpha = 1` is the Shannon limit, `alpha = inf` the min-entropy
/// `-log max p`. The result is clamped at 0 to absorb normalization slack.
pub fn renyi_entropy(logprobs: &[f64], alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0);
    let h = if alpha == 1.0 {
        -logprobs.iter().map(|&lp| lp.exp() * lp).sum::<f64>()
    } else if alpha.is_infinite() {
        -logprobs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    } else {
        let sum: f64 = logprobs.iter().map(|&lp| (alpha * lp).exp()).sum();
        sum.ln() / (1.0 - alpha)
    };
    h.max(0.0)
}

fn filtered(trace: &GenerationTrace, filter: SegmentFilter) -> Result<Vec<&TokenStep>, MiError> {
    let steps: Vec<&TokenStep> = trace.steps_matching(filter).collect();
    if steps.is_empty() {
        return Err(MiError::EmptyFilteredTrace);
    }
    Ok(steps)
}

fn chosen_logprobs(steps: &[&TokenStep]) -> Result<Vec<f64>, MiError> {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.chosen_logprob().ok_or(MiError::MissingField {
                step: i,
                field: "chosen_logprob",
            })
        })
        .collect()
}

/// Number of steps selected by a K% parameter: `max(1, ceil(k * T / 100))`,
/// clamped to `T` so tiny traces never yield an empty or oversized pick.
fn selection_size(k_percent: f64, t: usize) -> usize {
    let m = (k_percent * t as f64 / 100.0).ceil() as usize;
    m.clamp(1, t)
}

/// Indices of the `m` smallest values, stable on ties by original index.
fn smallest_m(values: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// Indices of the `m` largest values, stable on ties by original index.
fn largest_m(values: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// `exp(-(1/T) * sum of chosen logprobs)`. Lower means member.
pub fn perplexity(trace: &GenerationTrace, filter: SegmentFilter) -> Result<f64, MiError> {
    let steps = filtered(trace, filter)?;
    let lps = chosen_logprobs(&steps)?;
    let mean = lps.iter().sum::<f64>() / lps.len() as f64;
    Ok((-mean).exp())
}

/// Mean of the `max(1, ceil(k*T/100))` smallest chosen logprobs.
pub fn min_k(
    trace: &GenerationTrace,
    k_percent: f64,
    filter: SegmentFilter,
) -> Result<f64, MiError> {
    MiMethod::MinK { k_percent }.validate()?;
    let steps = filtered(trace, filter)?;
    let lps = chosen_logprobs(&steps)?;
    let m = selection_size(k_percent, lps.len());
    let picked = smallest_m(&lps, m);
    Ok(picked.iter().map(|&i| lps[i]).sum::<f64>() / m as f64)
}

/// Min-K% over per-step normalized logprobs `(l - mean) / max(std, 1e-6)`.
pub fn min_k_pp(
    trace: &GenerationTrace,
    k_percent: f64,
    filter: SegmentFilter,
) -> Result<f64, MiError> {
    MiMethod::MinKpp { k_percent }.validate()?;
    let steps = filtered(trace, filter)?;
    let mut normalized = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        let l = step.chosen_logprob().ok_or(MiError::MissingField {
            step: i,
            field: "chosen_logprob",
        })?;
        let mu = step.mean_logprob().ok_or(MiError::MissingField {
            step: i,
            field: "mean_logprob",
        })?;
        let sigma = step.std_logprob().ok_or(MiError::MissingField {
            step: i,
            field: "std_logprob",
        })?;
        normalized.push((l - mu) / sigma.max(1e-6));
    }
    let m = selection_size(k_percent, normalized.len());
    let picked = smallest_m(&normalized, m);
    Ok(picked.iter().map(|&i| normalized[i]).sum::<f64>() / m as f64)
}

/// Mean over steps of `p_max - p_second`.
pub fn max_prob_gap(trace: &GenerationTrace, filter: SegmentFilter) -> Result<f64, MiError> {
    let steps = filtered(trace, filter)?;
    let mut total = 0.0;
    for (i, step) in steps.iter().enumerate() {
        let max = step.max_logprob().ok_or(MiError::MissingField {
            step: i,
            field: "max_logprob",
        })?;
        let second = step.second_logprob().ok_or(MiError::MissingField {
            step: i,
            field: "second_logprob",
        })?;
        total += max.exp() - second.exp();
    }
    Ok(total / steps.len() as f64)
}

/// Negated mean Rényi entropy over the `m` most-uncertain steps. Confident
/// members stay low-entropy even at their most-uncertain positions, so
/// higher means member.
pub fn max_renyi_k(
    trace: &GenerationTrace,
    alpha: f64,
    k_percent: f64,
    filter: SegmentFilter,
) -> Result<f64, MiError> {
    MiMethod::MaxRenyiK { alpha, k_percent }.validate()?;
    let steps = filtered(trace, filter)?;
    let mut entropies = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        entropies.push(
            step.renyi_at(alpha)
                .ok_or(MiError::MissingRenyi { step: i, alpha })?,
        );
    }
    let m = selection_size(k_percent, entropies.len());
    let picked = largest_m(&entropies, m);
    Ok(-picked.iter().map(|&i| entropies[i]).sum::<f64>() / m as f64)
}

/// Mean over steps of `chosen_logprob + H_alpha`: chosen-token confidence
/// calibrated by the step's own entropy.
pub fn mod_renyi(
    trace: &GenerationTrace,
    alpha: f64,
    filter: SegmentFilter,
) -> Result<f64, MiError> {
    MiMethod::ModRenyi { alpha }.validate()?;
    let steps = filtered(trace, filter)?;
    let mut total = 0.0;
    for (i, step) in steps.iter().enumerate() {
        let l = step.chosen_logprob().ok_or(MiError::MissingField {
            step: i,
            field: "chosen_logprob",
        })?;
        let h = step
            .renyi_at(alpha)
            .ok_or(MiError::MissingRenyi { step: i, alpha })?;
        total += l + h;
    }
    Ok(total / steps.len() as f64)
}

/// Mean pairwise cosine similarity of chosen-token count vectors across
/// several sampled traces of one image (description steps only).
pub fn image_only_consistency(traces: &[&GenerationTrace]) -> Result<f64, MiError> {
    if traces.len() < 2 {
        return Err(MiError::TooFewTraces(traces.len()));
    }
    let mut vocab = 0usize;
    for trace in traces {
        for (i, step) in trace.steps_matching(SegmentFilter::Description).enumerate() {
            let full = step
                .full_distribution()
                .ok_or(MiError::NeedsFullMode { step: i })?;
            vocab = vocab.max(full.logprobs.len());
        }
    }
    if vocab == 0 {
        return Err(MiError::EmptyDescriptions);
    }
    let counts: Vec<Vec<f64>> = traces
        .iter()
        .map(|trace| {
            let mut v = vec![0.0; vocab];
            for step in trace.steps_matching(SegmentFilter::Description) {
                let full = step.full_distribution().expect("checked above");
                v[full.chosen_index] += 1.0;
            }
            v
        })
        .collect();
    if counts.iter().all(|v| v.iter().all(|&x| x == 0.0)) {
        return Err(MiError::EmptyDescriptions);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..counts.len() {
        for j in (i + 1)..counts.len() {
            total += cosine_similarity(&counts[i], &counts[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Group key for image-only consistency: the id up to the last `#`.
/// Sampled traces of one image are expected as `image#0`, `image#1`, ...
pub fn consistency_group(id: &str) -> &str {
    match id.rfind('#') {
        Some(pos) => &id[..pos],
        None => id,
    }
}

fn score_one(
    trace: &GenerationTrace,
    method: &MiMethod,
    filter: SegmentFilter,
) -> Result<f64, MiError> {
    match *method {
        MiMethod::Perplexity => perplexity(trace, filter),
        MiMethod::MinK { k_percent } => min_k(trace, k_percent, filter),
        MiMethod::MinKpp { k_percent } => min_k_pp(trace, k_percent, filter),
        MiMethod::MaxProbGap => max_prob_gap(trace, filter),
        MiMethod::MaxRenyiK { alpha, k_percent } => max_renyi_k(trace, alpha, k_percent, filter),
        MiMethod::ModRenyi { alpha } => mod_renyi(trace, alpha, filter),
        MiMethod::ImageOnlyConsistency => unreachable!("handled by group scoring"),
    }
}

/// Apply one method to every trace, producing a [`ScoreTable`] keyed by id.
///
/// Image-only consistency instead groups traces by [`consistency_group`] and
/// emits one score per group. Any per-trace error aborts with the offending
/// id attached.
pub fn score_dataset(
    traces: &[GenerationTrace],
    method: &MiMethod,
    filter: SegmentFilter,
) -> Result<ScoreTable, MiError> {
    method.validate()?;
    let mut params = method.params();
    params.insert("segment".into(), filter.as_str().into());

    let scores: BTreeMap<String, f64> = if *method == MiMethod::ImageOnlyConsistency {
        let mut groups: BTreeMap<&str, Vec<&GenerationTrace>> = BTreeMap::new();
        for trace in traces {
            groups
                .entry(consistency_group(&trace.id))
                .or_default()
                .push(trace);
        }
        let entries: Vec<(&str, Vec<&GenerationTrace>)> = groups.into_iter().collect();
        let scored: Result<Vec<(String, f64)>, MiError> = entries
            .par_iter()
            .map(|(gid, members)| {
                image_only_consistency(members)
                    .map(|s| (gid.to_string(), s))
                    .map_err(|e| MiError::Trace {
                        id: gid.to_string(),
                        source: Box::new(e),
                    })
            })
            .collect();
        scored?.into_iter().collect()
    } else {
        let scored: Result<Vec<(String, f64)>, MiError> = traces
            .par_iter()
            .map(|trace| {
                score_one(trace, method, filter)
                    .map(|s| (trace.id.clone(), s))
                    .map_err(|e| MiError::Trace {
                        id: trace.id.clone(),
                        source: Box::new(e),
                    })
            })
            .collect();
        scored?.into_iter().collect()
    };

    ScoreTable::new(method.name(), params, method.orientation(), scores)
        .map_err(|e| MiError::BadParam(e.to_string()))
}
