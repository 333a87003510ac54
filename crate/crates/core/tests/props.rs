//! Property tests for the crate-wide invariants.

use std::io::Cursor;

use miaudit_core::model::{GenerationTrace, Label, Segment, StepStats, TokenStep};
use miaudit_core::probe::softmax;
use miaudit_core::{eval, io, mi, shift};
use proptest::prelude::*;

fn full_step_strategy() -> impl Strategy<Value = TokenStep> {
    (
        prop::collection::vec(0.05f64..10.0, 2..8),
        any::<proptest::sample::Index>(),
        any::<bool>(),
    )
        .prop_map(|(weights, chosen, inst)| {
            let total: f64 = weights.iter().sum();
            let logprobs: Vec<f64> = weights.iter().map(|w| (w / total).ln()).collect();
            let segment = if inst {
                Segment::Instruction
            } else {
                Segment::Description
            };
            let chosen = chosen.index(logprobs.len());
            TokenStep::full(segment, chosen, logprobs).expect("normalized by construction")
        })
}

fn summary_step_strategy() -> impl Strategy<Value = TokenStep> {
    (
        -6.0f64..-0.01,
        0.0f64..3.0,
        0.0f64..3.0,
        -8.0f64..-0.01,
        0.0f64..2.0,
        any::<bool>(),
    )
        .prop_map(|(max, gap_second, gap_chosen, mean, std, inst)| {
            let segment = if inst {
                Segment::Instruction
            } else {
                Segment::Description
            };
            let stats = StepStats {
                chosen_logprob: Some(max - gap_chosen),
                max_logprob: Some(max),
                second_logprob: Some(max - gap_second),
                mean_logprob: Some(mean),
                std_logprob: Some(std),
                renyi: [(miaudit_core::model::Alpha::new(2.0).unwrap(), std * 0.5)]
                    .into_iter()
                    .collect(),
            };
            TokenStep::summary(segment, stats).expect("fields ordered by construction")
        })
}

fn trace_strategy() -> impl Strategy<Value = Vec<GenerationTrace>> {
    prop::collection::vec(
        (
            prop::collection::vec(
                prop_oneof![full_step_strategy(), summary_step_strategy()],
                1..6,
            ),
            prop::option::of(any::<bool>()),
        ),
        1..6,
    )
    .prop_map(|traces| {
        traces
            .into_iter()
            .enumerate()
            .map(|(i, (steps, label))| {
                let label = label.map(|m| if m { Label::Member } else { Label::NonMember });
                GenerationTrace::new(format!("trace{i:03}"), steps, label).expect("non-empty")
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Writing traces and reparsing reproduces the structure exactly.
    #[test]
    fn trace_jsonl_roundtrip(traces in trace_strategy()) {
        let mut bytes = Vec::new();
        io::write_traces(&mut bytes, &traces).unwrap();
        let reparsed = io::parse_traces(Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(&traces, &reparsed);
        // And a second cycle is byte-stable.
        let mut again = Vec::new();
        io::write_traces(&mut again, &reparsed).unwrap();
        prop_assert_eq!(bytes, again);
    }

    /// Embeddings CSV round-trips exactly through shortest-float forms.
    #[test]
    fn embeddings_roundtrip(
        rows in prop::collection::btree_map(
            "[a-z][a-z0-9]{0,6}",
            prop::collection::vec(-1e6f64..1e6, 3),
            1..8,
        )
    ) {
        let space = miaudit_core::model::EmbeddingSpace::new("x", rows).unwrap();
        let mut bytes = Vec::new();
        io::write_embeddings(&mut bytes, &space).unwrap();
        let reparsed = io::parse_embeddings(Cursor::new(&bytes), "x").unwrap();
        prop_assert_eq!(space, reparsed);
    }

    /// Negating all scores flips the AUC around one half; any strictly
    /// increasing transform leaves it untouched.
    #[test]
    fn auc_symmetry_and_rank_invariance(
        pos in prop::collection::vec(-50i32..50, 1..40),
        neg in prop::collection::vec(-50i32..50, 1..40),
    ) {
        let pos: Vec<f64> = pos.into_iter().map(|v| v as f64 / 4.0).collect();
        let neg: Vec<f64> = neg.into_iter().map(|v| v as f64 / 4.0).collect();
        let auc = eval::roc_auc(&pos, &neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));

        let fl_pos: Vec<f64> = pos.iter().map(|v| -v).collect();
        let fl_neg: Vec<f64> = neg.iter().map(|v| -v).collect();
        let flipped = eval::roc_auc(&fl_pos, &fl_neg).unwrap();
        prop_assert!((auc + flipped - 1.0).abs() < 1e-12);

        let monotone = |v: f64| (v / 30.0).atan() * 2.0 + 7.0;
        let tr_pos: Vec<f64> = pos.iter().map(|&v| monotone(v)).collect();
        let tr_neg: Vec<f64> = neg.iter().map(|&v| monotone(v)).collect();
        prop_assert_eq!(auc, eval::roc_auc(&tr_pos, &tr_neg).unwrap());
    }

    /// min_k is monotone non-decreasing in k and equals the mean at k=100.
    #[test]
    fn min_k_monotone(lps in prop::collection::vec(-9.0f64..-0.01, 1..20)) {
        let steps: Vec<TokenStep> = lps
            .iter()
            .map(|&lp| {
                TokenStep::summary(
                    Segment::Description,
                    StepStats { chosen_logprob: Some(lp), ..StepStats::default() },
                )
                .unwrap()
            })
            .collect();
        let trace = GenerationTrace::new("t", steps, None).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=20 {
            let v = mi::min_k(&trace, k as f64 * 5.0, miaudit_core::model::SegmentFilter::Both)
                .unwrap();
            prop_assert!(v >= prev - 1e-12);
            prev = v;
        }
        let mean = lps.iter().sum::<f64>() / lps.len() as f64;
        let full = mi::min_k(&trace, 100.0, miaudit_core::model::SegmentFilter::Both).unwrap();
        prop_assert!((full - mean).abs() < 1e-12);
    }

    /// 1D Wasserstein: symmetric, non-negative, zero exactly on identical
    /// multisets.
    #[test]
    fn wasserstein_1d_metric_basics(
        xs in prop::collection::vec(-100.0f64..100.0, 1..30),
        ys_seed in prop::collection::vec(-100.0f64..100.0, 1..30),
    ) {
        let n = xs.len().min(ys_seed.len());
        let xs = &xs[..n];
        let ys = &ys_seed[..n];
        let ab = shift::wasserstein_1d(xs, ys, 2.0).unwrap();
        let ba = shift::wasserstein_1d(ys, xs, 2.0).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);

        let mut shuffled = xs.to_vec();
        shuffled.reverse();
        prop_assert_eq!(shift::wasserstein_1d(xs, &shuffled, 2.0).unwrap(), 0.0);
    }

    /// Softmax weights are a distribution and ignore a constant logit shift.
    #[test]
    fn softmax_distribution_and_shift_invariance(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift_by in -100.0f64..100.0,
    ) {
        let w = softmax(&logits);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift_by).collect();
        let w_shifted = softmax(&shifted);
        for (a, b) in w.iter().zip(&w_shifted) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
