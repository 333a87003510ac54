//! Domain types shared by every module.
//!
//! A [`GenerationTrace`] is the per-image record of token steps emitted by a
//! scored model; each [`TokenStep`] either carries the full next-token
//! distribution or only summary statistics. [`EmbeddingSpace`] holds
//! fixed-dimension vectors keyed by sample id, [`GrayImage`] a pixel
//! intensity matrix, [`ScoreTable`] per-sample scores with a declared
//! orientation, and [`LabeledDataset`] the member/non-member ground truth.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Slack accepted on `Σ exp(logprob) = 1` for full distributions.
pub const NORMALIZATION_TOL: f64 = 1e-4;

/// Tolerance for cross-checking stored summary fields against values
/// re-derived from a full distribution.
pub const DERIVED_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("distribution not normalized (sum of probabilities = {sum:.6})")]
    NotNormalized { sum: f64 },
    #[error("chosen index {chosen} out of range for vocabulary of {vocab}")]
    ChosenOutOfRange { chosen: usize, vocab: usize },
    #[error("full distribution needs at least 2 vocabulary entries")]
    VocabTooSmall,
    #[error("field {field} must be finite")]
    NonFinite { field: &'static str },
    #[error("logprob field {field} must be <= 0, got {value}")]
    PositiveLogprob { field: &'static str, value: f64 },
    #[error("second_logprob {second} exceeds max_logprob {max}")]
    SecondExceedsMax { second: f64, max: f64 },
    #[error("chosen_logprob {chosen} exceeds max_logprob {max}")]
    ChosenExceedsMax { chosen: f64, max: f64 },
    #[error("negative std_logprob {0}")]
    NegativeStd(f64),
    #[error("stored {field} = {stored} disagrees with value {derived} derived from the full distribution")]
    InconsistentDerived {
        field: String,
        stored: f64,
        derived: f64,
    },
    #[error("renyi order must be positive, got {0}")]
    BadRenyiOrder(f64),
    #[error("trace must contain at least one step")]
    EmptySteps,
    #[error("label must be 0 or 1, got {0}")]
    BadLabel(u8),
    #[error("empty space (no rows)")]
    EmptySpace,
    #[error("embedding dim must be >= 1")]
    ZeroDim,
    #[error("row {id} has {got} features, expected {expected}")]
    DimMismatch {
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("row {id} contains a non-finite value")]
    NonFiniteRow { id: String },
    #[error("image dimensions {height}x{width} do not match {len} intensities")]
    ImageShape {
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("intensity {0} outside [0, 255]")]
    IntensityRange(f64),
    #[error("score for {id} is not finite")]
    NonFiniteScore { id: String },
}

/// Prompt/response region a token belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    #[serde(rename = "inst")]
    Instruction,
    #[serde(rename = "desp")]
    Description,
}

/// Which segments an operation looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentFilter {
    Instruction,
    Description,
    Both,
}

impl SegmentFilter {
    pub fn matches(self, segment: Segment) -> bool {
        match self {
            SegmentFilter::Instruction => segment == Segment::Instruction,
            SegmentFilter::Description => segment == Segment::Description,
            SegmentFilter::Both => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentFilter::Instruction => "inst",
            SegmentFilter::Description => "desp",
            SegmentFilter::Both => "both",
        }
    }
}

impl std::str::FromStr for SegmentFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inst" | "instruction" => Ok(SegmentFilter::Instruction),
            "desp" | "description" => Ok(SegmentFilter::Description),
            "both" => Ok(SegmentFilter::Both),
            other => Err(format!("unknown segment filter `{other}`")),
        }
    }
}

/// Membership ground truth. Member is the positive class everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    NonMember,
    Member,
}

impl Label {
    pub fn from_u8(v: u8) -> Result<Label, ValidationError> {
        match v {
            0 => Ok(Label::NonMember),
            1 => Ok(Label::Member),
            other => Err(ValidationError::BadLabel(other)),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::NonMember => 0,
            Label::Member => 1,
        }
    }
}

/// Rényi entropy order. Ordered and serialized through its decimal form so
/// it can key JSON maps ("0.5", "1", "2", "inf").
#[derive(Clone, Copy, Debug)]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(value: f64) -> Result<Alpha, ValidationError> {
        if value > 0.0 {
            Ok(Alpha(value))
        } else {
            Err(ValidationError::BadRenyiOrder(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl PartialEq for Alpha {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == std::cmp::Ordering::Equal
    }
}
impl Eq for Alpha {}
impl PartialOrd for Alpha {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Alpha {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let v: f64 = s
            .parse()
            .map_err(|_| D::Error::custom(format!("bad renyi order `{s}`")))?;
        Alpha::new(v).map_err(D::Error::custom)
    }
}

/// Default Rényi orders carried by derived summaries.
pub const DEFAULT_RENYI_ORDERS: [f64; 3] = [0.5, 1.0, 2.0];

/// Summary statistics of one token step. Fields are individually optional
/// so summary-mode producers only ship what they have; every statistic a
/// method needs is checked at scoring time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub chosen_logprob: Option<f64>,
    pub max_logprob: Option<f64>,
    pub second_logprob: Option<f64>,
    pub mean_logprob: Option<f64>,
    pub std_logprob: Option<f64>,
    pub renyi: BTreeMap<Alpha, f64>,
}

impl StepStats {
    fn validate(&self) -> Result<(), ValidationError> {
        let check = |name: &'static str, v: Option<f64>| -> Result<(), ValidationError> {
            if let Some(x) = v {
                if !x.is_finite() {
                    return Err(ValidationError::NonFinite { field: name });
                }
            }
            Ok(())
        };
        check("chosen_logprob", self.chosen_logprob)?;
        check("max_logprob", self.max_logprob)?;
        check("second_logprob", self.second_logprob)?;
        check("mean_logprob", self.mean_logprob)?;
        check("std_logprob", self.std_logprob)?;
        // Logprobs of probabilities are non-positive; allow the same slack
        // the normalization check grants.
        let log_slack = NORMALIZATION_TOL;
        for (name, v) in [
            ("chosen_logprob", self.chosen_logprob),
            ("max_logprob", self.max_logprob),
            ("second_logprob", self.second_logprob),
        ] {
            if let Some(x) = v {
                if x > log_slack {
                    return Err(ValidationError::PositiveLogprob {
                        field: name,
                        value: x,
                    });
                }
            }
        }
        if let (Some(second), Some(max)) = (self.second_logprob, self.max_logprob) {
            if second > max {
                return Err(ValidationError::SecondExceedsMax { second, max });
            }
        }
        if let (Some(chosen), Some(max)) = (self.chosen_logprob, self.max_logprob) {
            if chosen > max + DERIVED_TOL {
                return Err(ValidationError::ChosenExceedsMax { chosen, max });
            }
        }
        if let Some(std) = self.std_logprob {
            if std < 0.0 {
                return Err(ValidationError::NegativeStd(std));
            }
        }
        for (&alpha, &h) in &self.renyi {
            if !h.is_finite() {
                return Err(ValidationError::NonFinite { field: "renyi" });
            }
            let _ = alpha;
        }
        Ok(())
    }
}

/// Full next-token distribution for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct FullDistribution {
    pub chosen_index: usize,
    /// Natural-log probabilities, one per vocabulary entry.
    pub logprobs: Vec<f64>,
}

/// One token step, either with the full distribution or only summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenStep {
    pub segment: Segment,
    full: Option<FullDistribution>,
    stats: StepStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    Full,
    Summary,
}

impl TokenStep {
    /// Build a full-mode step, validating the distribution and deriving all
    /// summary statistics (including Rényi entropies at the default orders).
    pub fn full(
        segment: Segment,
        chosen_index: usize,
        logprobs: Vec<f64>,
    ) -> Result<TokenStep, ValidationError> {
        if logprobs.len() < 2 {
            return Err(ValidationError::VocabTooSmall);
        }
        if chosen_index >= logprobs.len() {
            return Err(ValidationError::ChosenOutOfRange {
                chosen: chosen_index,
                vocab: logprobs.len(),
            });
        }
        for &lp in &logprobs {
            if !lp.is_finite() {
                return Err(ValidationError::NonFinite { field: "logprobs" });
            }
        }
        let sum: f64 = logprobs.iter().map(|lp| lp.exp()).sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(ValidationError::NotNormalized { sum });
        }
        let stats = derive_stats(chosen_index, &logprobs);
        Ok(TokenStep {
            segment,
            full: Some(FullDistribution {
                chosen_index,
                logprobs,
            }),
            stats,
        })
    }

    /// Build a summary-mode step from whatever fields the producer logged.
    pub fn summary(segment: Segment, stats: StepStats) -> Result<TokenStep, ValidationError> {
        stats.validate()?;
        Ok(TokenStep {
            segment,
            full: None,
            stats,
        })
    }

    pub fn mode(&self) -> StepMode {
        if self.full.is_some() {
            StepMode::Full
        } else {
            StepMode::Summary
        }
    }

    pub fn full_distribution(&self) -> Option<&FullDistribution> {
        self.full.as_ref()
    }

    pub fn stats(&self) -> &StepStats {
        &self.stats
    }

    pub fn chosen_logprob(&self) -> Option<f64> {
        self.stats.chosen_logprob
    }

    pub fn max_logprob(&self) -> Option<f64> {
        self.stats.max_logprob
    }

    pub fn second_logprob(&self) -> Option<f64> {
        self.stats.second_logprob
    }

    pub fn mean_logprob(&self) -> Option<f64> {
        self.stats.mean_logprob
    }

    pub fn std_logprob(&self) -> Option<f64> {
        self.stats.std_logprob
    }

    /// Rényi entropy at `alpha`: computed on demand in full mode, looked up
    /// in the stored map otherwise.
    pub fn renyi_at(&self, alpha: f64) -> Option<f64> {
        if let Some(full) = &self.full {
            return Some(crate::mi::renyi_entropy(&full.logprobs, alpha));
        }
        Alpha::new(alpha)
            .ok()
            .and_then(|a| self.stats.renyi.get(&a).copied())
    }

    /// Drop the full distribution, keeping the derived summaries.
    pub fn to_summary(&self) -> TokenStep {
        TokenStep {
            segment: self.segment,
            full: None,
            stats: self.stats.clone(),
        }
    }
}

/// Derive every summary statistic from a full distribution.
pub fn derive_stats(chosen_index: usize, logprobs: &[f64]) -> StepStats {
    let chosen_logprob = logprobs[chosen_index];
    let mut max = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &lp in logprobs {
        if lp > max {
            second = max;
            max = lp;
        } else if lp > second {
            second = lp;
        }
    }
    let mean: f64 = logprobs.iter().map(|&lp| lp.exp() * lp).sum();
    let var: f64 = logprobs
        .iter()
        .map(|&lp| lp.exp() * (lp - mean) * (lp - mean))
        .sum();
    let mut renyi = BTreeMap::new();
    for &alpha in &DEFAULT_RENYI_ORDERS {
        renyi.insert(
            Alpha::new(alpha).expect("default orders are positive"),
            crate::mi::renyi_entropy(logprobs, alpha),
        );
    }
    StepStats {
        chosen_logprob: Some(chosen_logprob),
        max_logprob: Some(max),
        second_logprob: Some(second),
        mean_logprob: Some(mean),
        std_logprob: Some(var.max(0.0).sqrt()),
        renyi,
    }
}

/// Per-image sequence of token steps with optional membership label.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationTrace {
    pub id: String,
    pub steps: Vec<TokenStep>,
    pub label: Option<Label>,
}

impl GenerationTrace {
    pub fn new(
        id: impl Into<String>,
        steps: Vec<TokenStep>,
        label: Option<Label>,
    ) -> Result<GenerationTrace, ValidationError> {
        if steps.is_empty() {
            return Err(ValidationError::EmptySteps);
        }
        Ok(GenerationTrace {
            id: id.into(),
            steps,
            label,
        })
    }

    /// Summary-mode copy (full distributions dropped).
    pub fn to_summary(&self) -> GenerationTrace {
        GenerationTrace {
            id: self.id.clone(),
            steps: self.steps.iter().map(TokenStep::to_summary).collect(),
            label: self.label,
        }
    }

    pub fn steps_matching(&self, filter: SegmentFilter) -> impl Iterator<Item = &TokenStep> {
        self.steps.iter().filter(move |s| filter.matches(s.segment))
    }
}

/// Named collection of fixed-dimension vectors keyed by sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    pub name: String,
    pub dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingSpace {
    pub fn new(
        name: impl Into<String>,
        rows: BTreeMap<String, Vec<f64>>,
    ) -> Result<EmbeddingSpace, ValidationError> {
        if rows.is_empty() {
            return Err(ValidationError::EmptySpace);
        }
        let dim = rows.values().next().expect("non-empty").len();
        if dim == 0 {
            return Err(ValidationError::ZeroDim);
        }
        for (id, v) in &rows {
            if v.len() != dim {
                return Err(ValidationError::DimMismatch {
                    id: id.clone(),
                    got: v.len(),
                    expected: dim,
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ValidationError::NonFiniteRow { id: id.clone() });
            }
        }
        Ok(EmbeddingSpace {
            name: name.into(),
            dim,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    /// Rows in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(id, v)| (id.as_str(), v.as_slice()))
    }

    /// Row vectors in id order.
    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.rows.values().cloned().collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }
}

/// Grayscale image with intensities in `[0, 255]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<GrayImage, ValidationError> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(ValidationError::ImageShape {
                height,
                width,
                len: data.len(),
            });
        }
        for &v in &data {
            if !v.is_finite() || !(0.0..=255.0).contains(&v) {
                return Err(ValidationError::IntensityRange(v));
            }
        }
        Ok(GrayImage {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }
}

/// Direction in which a score indicates membership.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsMember,
    LowerIsMember,
}

/// Per-sample real-valued scores for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub method: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub orientation: Orientation,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreTable {
    pub fn new(
        method: impl Into<String>,
        params: BTreeMap<String, serde_json::Value>,
        orientation: Orientation,
        scores: BTreeMap<String, f64>,
    ) -> Result<ScoreTable, ValidationError> {
        for (id, &s) in &scores {
            if s.is_nan() {
                return Err(ValidationError::NonFiniteScore { id: id.clone() });
            }
        }
        Ok(ScoreTable {
            method: method.into(),
            params,
            orientation,
            scores,
        })
    }
}

/// Ground-truth labels keyed by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDataset {
    labels: BTreeMap<String, Label>,
}

impl LabeledDataset {
    pub fn new(labels: BTreeMap<String, Label>) -> LabeledDataset {
        LabeledDataset { labels }
    }

    pub fn insert(&mut self, id: impl Into<String>, label: Label) {
        self.labels.insert(id.into(), label);
    }

    pub fn get(&self, id: &str) -> Option<Label> {
        self.labels.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Label)> {
        self.labels.iter().map(|(id, &l)| (id.as_str(), l))
    }

    pub fn both_classes_present(&self) -> bool {
        let members = self
            .labels
            .values()
            .filter(|l| **l == Label::Member)
            .count();
        members > 0 && members < self.labels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_step_derives_summaries() {
        let lp = (0.5f64).ln();
        let step = TokenStep::full(Segment::Description, 0, vec![lp, lp]).unwrap();
        assert_eq!(step.mode(), StepMode::Full);
        assert!((step.chosen_logprob().unwrap() - lp).abs() < 1e-12);
        assert!((step.max_logprob().unwrap() - lp).abs() < 1e-12);
        assert!((step.second_logprob().unwrap() - lp).abs() < 1e-12);
        // Uniform over two symbols: mean = ln(1/2), std = 0, H_alpha = ln 2.
        assert!((step.mean_logprob().unwrap() - lp).abs() < 1e-12);
        assert!(step.std_logprob().unwrap() < 1e-12);
        for alpha in [0.5, 1.0, 2.0] {
            assert!((step.renyi_at(alpha).unwrap() - 2.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn full_step_rejects_unnormalized() {
        let lp = (0.45f64).ln();
        let err = TokenStep::full(Segment::Description, 0, vec![lp, lp]).unwrap_err();
        assert!(err.to_string().contains("not normalized"));
    }

    #[test]
    fn full_step_rejects_bad_chosen_index() {
        let lp = (0.5f64).ln();
        assert!(TokenStep::full(Segment::Description, 2, vec![lp, lp]).is_err());
    }

    #[test]
    fn summary_step_validates_field_relations() {
        let bad = StepStats {
            max_logprob: Some(-1.0),
            second_logprob: Some(-0.5),
            ..StepStats::default()
        };
        assert!(TokenStep::summary(Segment::Description, bad).is_err());

        let neg_std = StepStats {
            std_logprob: Some(-0.1),
            ..StepStats::default()
        };
        let err = TokenStep::summary(Segment::Description, neg_std).unwrap_err();
        assert!(err.to_string().contains("negative std"));
    }

    #[test]
    fn derived_summary_matches_full_within_tolerance() {
        // A skewed three-symbol distribution.
        let probs = [0.7, 0.2, 0.1];
        let lps: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
        let step = TokenStep::full(Segment::Instruction, 1, lps.clone()).unwrap();
        let summary = step.to_summary();
        assert_eq!(summary.mode(), StepMode::Summary);
        let re = derive_stats(1, &lps);
        assert!((summary.mean_logprob().unwrap() - re.mean_logprob.unwrap()).abs() < DERIVED_TOL);
        assert!((summary.std_logprob().unwrap() - re.std_logprob.unwrap()).abs() < DERIVED_TOL);
        // Shannon entropy equals the negated mean logprob.
        assert!(
            (summary.renyi_at(1.0).unwrap() + summary.mean_logprob().unwrap()).abs() < DERIVED_TOL
        );
    }

    #[test]
    fn trace_requires_steps() {
        assert!(GenerationTrace::new("t", vec![], None).is_err());
    }

    #[test]
    fn embedding_space_rejects_ragged_rows() {
        let mut rows = BTreeMap::new();
        rows.insert("a".to_string(), vec![1.0, 2.0]);
        rows.insert("b".to_string(), vec![1.0]);
        assert!(EmbeddingSpace::new("x", rows).is_err());
    }

    #[test]
    fn alpha_orders_and_formats() {
        let a = Alpha::new(0.5).unwrap();
        let b = Alpha::new(2.0).unwrap();
        assert!(a < b);
        assert_eq!(a.to_string(), "0.5");
        assert_eq!(Alpha::new(1.0).unwrap().to_string(), "1");
        assert!(Alpha::new(0.0).is_err());
        assert!(Alpha::new(-1.0).is_err());
    }
}
