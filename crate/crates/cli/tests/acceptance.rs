//! Acceptance suite: one test per shipping criterion, each printing a
//! PASS line with the measured values (visible with `--nocapture`):
//!
//! ```text
//! cargo test -p miaudit-cli --test acceptance -- --nocapture
//! ```

use std::path::Path;
use std::time::Instant;

use miaudit_core::eval::{self, Aggregator};
use miaudit_core::mi::{self, MiMethod};
use miaudit_core::model::{Label, SegmentFilter};
use miaudit_core::probe::{self, Hyperparams, ProbeKind, TokenFeatureSequence};
use miaudit_core::rng::{child_rng, seeded};
use miaudit_core::stats::standard_normal_cdf;
use miaudit_core::synth::{self, SynthConfig};
use miaudit_core::{ber, shift};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn pass(criterion: &str, detail: String) {
    println!("acceptance {criterion}: PASS — {detail}");
}

fn runtime_ok(criterion: &str, start: Instant, limit_s: u64) {
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < limit_s,
        "{criterion} exceeded the {limit_s}s budget: {elapsed:?}"
    );
}

/// Per-method evaluation of synthetic traces against their own labels,
/// oriented per the method declaration.
fn mi_method_metrics(
    traces: &[miaudit_core::model::GenerationTrace],
    method: &MiMethod,
) -> (f64, f64) {
    let table = mi::score_dataset(traces, method, SegmentFilter::Both).unwrap();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for trace in traces {
        let key = if *method == MiMethod::ImageOnlyConsistency {
            mi::consistency_group(&trace.id).to_string()
        } else {
            trace.id.clone()
        };
        if !seen.insert(key.clone()) {
            continue;
        }
        let score = table.scores[&key];
        match trace.label.unwrap() {
            Label::Member => pos.push(score),
            Label::NonMember => neg.push(score),
        }
    }
    let pos = eval::orient(pos, table.orientation);
    let neg = eval::orient(neg, table.orientation);
    let auc = eval::roc_auc(&pos, &neg).unwrap();
    let tpr = eval::tpr_at_fpr(&pos, &neg, 0.05).unwrap();
    (auc, tpr)
}

fn every_mi_method() -> Vec<MiMethod> {
    vec![
        MiMethod::Perplexity,
        MiMethod::MinK { k_percent: 20.0 },
        MiMethod::MinKpp { k_percent: 20.0 },
        MiMethod::MaxProbGap,
        MiMethod::MaxRenyiK {
            alpha: 0.5,
            k_percent: 20.0,
        },
        MiMethod::MaxRenyiK {
            alpha: 2.0,
            k_percent: 20.0,
        },
        MiMethod::ModRenyi { alpha: 0.5 },
        MiMethod::ModRenyi { alpha: 1.0 },
        MiMethod::ModRenyi { alpha: 2.0 },
    ]
}

/// Criterion 1: on sharp-vs-blurred image sets a linear probe over 10-band
/// frequency features exceeds AUC 0.95 while every MI score on signal-free
/// traces for the same ids stays in [0.45, 0.55].
#[test]
fn c01_shortcut_dominates_null_traces() {
    let start = Instant::now();
    let config = SynthConfig {
        seed: 41,
        n_per_class: 300,
        height: 32,
        width: 32,
        blur_radius: 2,
        trace_len: 32,
        vocab: 64,
        signal: 0.0,
        ..SynthConfig::default()
    };

    // Frequency features; sharp images are the members.
    let (sharp, blurred) = synth::gen_images(&config).unwrap();
    let mut data = Vec::new();
    for (i, image) in sharp.iter().enumerate() {
        let bands = shift::band_energies(image, 10).unwrap();
        data.push(
            TokenFeatureSequence::new(
                format!("m{i:04}"),
                vec![bands.energies],
                Some(Label::Member),
            )
            .unwrap(),
        );
    }
    for (i, image) in blurred.iter().enumerate() {
        let bands = shift::band_energies(image, 10).unwrap();
        data.push(
            TokenFeatureSequence::new(
                format!("n{i:04}"),
                vec![bands.energies],
                Some(Label::NonMember),
            )
            .unwrap(),
        );
    }
    let (train, held_out) = probe::split_train_val(&data, 0.5, config.seed);
    let (model, _) = probe::train_probe(
        &train,
        &held_out,
        ProbeKind::Linear,
        &Hyperparams::default(),
        config.seed,
    )
    .unwrap();
    let probabilities = probe::predict(&model, &held_out).unwrap();
    let (pos, neg): (Vec<f64>, Vec<f64>) =
        probabilities.iter().zip(&held_out).partition_map_labels();
    let probe_auc = eval::roc_auc(&pos, &neg).unwrap();
    assert!(probe_auc > 0.95, "frequency probe AUC {probe_auc}");

    // Signal-free traces for the same ids: every MI method stays at chance.
    let traces = synth::gen_traces(&config).unwrap();
    let mut details = vec![format!("probe_auc={probe_auc:.3}")];
    for method in every_mi_method() {
        let (auc, _) = mi_method_metrics(&traces, &method);
        assert!(
            (0.45..=0.55).contains(&auc),
            "{} AUC {auc} outside [0.45, 0.55]",
            method.name()
        );
        details.push(format!("{}={auc:.3}", method.name()));
    }
    let consistency_config = SynthConfig {
        samples_per_image: 2,
        ..config
    };
    let sampled = synth::gen_traces(&consistency_config).unwrap();
    let (auc, _) = mi_method_metrics(&sampled, &MiMethod::ImageOnlyConsistency);
    assert!(
        (0.45..=0.55).contains(&auc),
        "image_consistency AUC {auc} outside [0.45, 0.55]"
    );
    details.push(format!("image_consistency={auc:.3}"));

    runtime_ok("c01", start, 60);
    pass("c01 shortcut-dominance analog", details.join(" "));
}

trait PartitionMapLabels {
    fn partition_map_labels(self) -> (Vec<f64>, Vec<f64>);
}

impl<'a, I> PartitionMapLabels for I
where
    I: Iterator<Item = (&'a f64, &'a TokenFeatureSequence)>,
{
    fn partition_map_labels(self) -> (Vec<f64>, Vec<f64>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (&p, seq) in self {
            match seq.label.unwrap() {
                Label::Member => pos.push(p),
                Label::NonMember => neg.push(p),
            }
        }
        (pos, neg)
    }
}

/// Criterion 2: WiRED calibration — final score in [0.8, 1.3] on i.i.d.
/// embeddings and above 2 under a 3-sigma mean shift, for 10/10 seeds.
#[test]
fn c02_wired_iid_calibration() {
    let start = Instant::now();
    let mut iid_ratios = Vec::new();
    let mut shifted_ratios = Vec::new();
    for seed in 0..10u64 {
        for (delta, bucket) in [(0.0, &mut iid_ratios), (3.0, &mut shifted_ratios)] {
            let config = SynthConfig {
                seed: 500 + seed,
                n_per_class: 300,
                dim: 16,
                delta,
                ..SynthConfig::default()
            };
            let (s1, s2) = synth::gen_shifted_embeddings(&config).unwrap();
            let spaces = vec![("embed".to_string(), s1.vectors(), s2.vectors())];
            let report = shift::wired(&spaces, 128, 2.0, 10, seed).unwrap();
            bucket.push(report.final_score);
        }
    }
    for (seed, ratio) in iid_ratios.iter().enumerate() {
        assert!(
            (0.8..=1.3).contains(ratio),
            "seed {seed}: iid WiRED {ratio} outside [0.8, 1.3]"
        );
    }
    for (seed, ratio) in shifted_ratios.iter().enumerate() {
        assert!(*ratio > 2.0, "seed {seed}: shifted WiRED {ratio} <= 2");
    }
    runtime_ok("c02", start, 30);
    pass(
        "c02 WiRED i.i.d. calibration",
        format!(
            "iid 10/10 in [{:.3}, {:.3}], shifted 10/10 in [{:.3}, {:.3}]",
            iid_ratios.iter().cloned().fold(f64::INFINITY, f64::min),
            iid_ratios.iter().cloned().fold(0.0, f64::max),
            shifted_ratios.iter().cloned().fold(f64::INFINITY, f64::min),
            shifted_ratios.iter().cloned().fold(0.0, f64::max),
        ),
    );
}

/// Criterion 3: with zero membership signal every MI method's AUC sits in
/// [0.45, 0.55] and TPR@5%FPR in [0, 0.10].
#[test]
fn c03_null_mi_methods_stay_at_chance() {
    let start = Instant::now();
    let config = SynthConfig {
        seed: 62,
        n_per_class: 300,
        trace_len: 32,
        vocab: 64,
        signal: 0.0,
        ..SynthConfig::default()
    };
    let traces = synth::gen_traces(&config).unwrap();
    let mut details = Vec::new();
    for method in every_mi_method() {
        let (auc, tpr) = mi_method_metrics(&traces, &method);
        assert!(
            (0.45..=0.55).contains(&auc),
            "{} null AUC {auc}",
            method.name()
        );
        assert!(
            (0.0..=0.10).contains(&tpr),
            "{} null TPR@5%FPR {tpr}",
            method.name()
        );
        details.push(format!("{} auc={auc:.3} tpr={tpr:.3}", method.name()));
    }
    let sampled = synth::gen_traces(&SynthConfig {
        samples_per_image: 2,
        ..config
    })
    .unwrap();
    let (auc, tpr) = mi_method_metrics(&sampled, &MiMethod::ImageOnlyConsistency);
    assert!((0.45..=0.55).contains(&auc), "consistency null AUC {auc}");
    assert!((0.0..=0.10).contains(&tpr), "consistency null TPR {tpr}");
    details.push(format!("image_consistency auc={auc:.3} tpr={tpr:.3}"));

    runtime_ok("c03", start, 60);
    pass("c03 null-MI analog", details.join(" "));
}

/// Criterion 4: the graph estimate tracks the analytic Bayes error of
/// overlapping Gaussians within +-0.05 across 5 seeds, and separable blobs
/// stay at essentially zero.
#[test]
fn c04_ber_gaussian_oracle() {
    let start = Instant::now();
    let oracle = ber::gaussian_bayes_error(2.0, 1.0).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut estimates = Vec::new();
    for seed in 0..5u64 {
        let mut rng = seeded(900 + seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..1000 {
            features.push(vec![normal.sample(&mut rng) - 1.0]);
            labels.push(Label::NonMember);
        }
        for _ in 0..1000 {
            features.push(vec![normal.sample(&mut rng) + 1.0]);
            labels.push(Label::Member);
        }
        let report = ber::estimate_ber(&features, &labels, &ber::BerParams::default()).unwrap();
        assert!(
            (report.ber - oracle).abs() <= 0.05,
            "seed {seed}: BER {} vs oracle {oracle}",
            report.ber
        );
        estimates.push(report.ber);
    }

    let mut rng = seeded(77);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..1000 {
        let member = i % 2 == 0;
        let shift = if member { 5.0 } else { -5.0 };
        features.push(vec![
            normal.sample(&mut rng) + shift,
            normal.sample(&mut rng),
        ]);
        labels.push(if member {
            Label::Member
        } else {
            Label::NonMember
        });
    }
    let blob = ber::estimate_ber(&features, &labels, &ber::BerParams::default()).unwrap();
    assert!(blob.ber <= 0.01, "separable blob BER {}", blob.ber);

    runtime_ok("c04", start, 60);
    pass(
        "c04 BER oracle",
        format!(
            "estimates {estimates:?} vs oracle {oracle:.4}, blobs {:.4}",
            blob.ber
        ),
    );
}

/// Criterion 5: set-level inference lifts an engineered 0.55 per-sample AUC
/// by at least 0.15 at m=100 and tracks the analytic normal-score curve
/// within +-0.03 at every size.
#[test]
fn c05_set_inference_lift() {
    let start = Instant::now();
    // Phi^-1(0.55) = 0.125661...; the member/non-member gap delta =
    // sqrt(2) * z gives a per-sample AUC of 0.55 for unit-variance normals.
    let z_55 = 0.125_661_346_855_074_02_f64;
    let delta = std::f64::consts::SQRT_2 * z_55;
    let normal_member = Normal::new(delta, 1.0).unwrap();
    let normal_non = Normal::new(0.0, 1.0).unwrap();
    let mut rng = seeded(1002);
    let member: Vec<f64> = (0..20000).map(|_| normal_member.sample(&mut rng)).collect();
    let non: Vec<f64> = (0..20000).map(|_| normal_non.sample(&mut rng)).collect();

    let per_sample = eval::roc_auc(&member, &non).unwrap();
    assert!(
        (per_sample - 0.55).abs() <= 0.02,
        "engineered per-sample AUC {per_sample}"
    );

    let sizes = [1usize, 2, 5, 10, 20, 50, 100];
    let curve = eval::sweep_set_sizes(&member, &non, &sizes, 1000, 6, Aggregator::Mean).unwrap();
    let mut details = vec![format!("per_sample={per_sample:.3}")];
    for (&m, &auc) in sizes.iter().zip(&curve.auc_per_size) {
        let analytic = standard_normal_cdf(delta * (m as f64).sqrt() / std::f64::consts::SQRT_2);
        assert!(
            (auc - analytic).abs() <= 0.03,
            "m={m}: AUC {auc} vs analytic {analytic}"
        );
        details.push(format!("m{m}={auc:.3}/{analytic:.3}"));
    }
    let lift = curve.auc_per_size[6] - curve.auc_per_size[0];
    assert!(lift >= 0.15, "lift {lift} below 0.15");
    details.push(format!("lift={lift:.3}"));

    runtime_ok("c05", start, 60);
    pass("c05 set-inference lift", details.join(" "));
}

/// Criterion 6: midrank AUC equals brute-force pairwise counting within
/// 1e-12 on 100 random instances with ties.
#[test]
fn c06_auc_oracle_equivalence() {
    // Independent O(n^2) oracle: wins plus half-ties over all pairs.
    fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut total = 0.0;
        for &p in pos {
            for &n in neg {
                if p > n {
                    total += 1.0;
                } else if p == n {
                    total += 0.5;
                }
            }
        }
        total / (pos.len() as f64 * neg.len() as f64)
    }

    let mut max_diff = 0.0f64;
    for instance in 0..100u64 {
        let mut rng = seeded(3000 + instance);
        let n_pos = rng.gen_range(1..=100);
        let n_neg = rng.gen_range(1..=100);
        // A coarse grid forces plenty of ties.
        let levels = rng.gen_range(2..=12);
        fn sample(rng: &mut impl Rng, n: usize, levels: usize) -> Vec<f64> {
            (0..n)
                .map(|_| (rng.gen::<f64>() * levels as f64).floor() / 3.0)
                .collect()
        }
        let pos = sample(&mut rng, n_pos, levels);
        let neg = sample(&mut rng, n_neg, levels);
        let fast = eval::roc_auc(&pos, &neg).unwrap();
        let oracle = pairwise_auc(&pos, &neg);
        let diff = (fast - oracle).abs();
        assert!(
            diff <= 1e-12,
            "instance {instance}: midrank {fast} vs pairwise {oracle}"
        );
        max_diff = max_diff.max(diff);
    }
    pass(
        "c06 AUC oracle equivalence",
        format!("100 instances, max |difference| = {max_diff:.2e}"),
    );
}

/// Criterion 7: analytic probe gradients match central finite differences
/// at eps = 1e-5 with max relative error below 1e-4, 20 instances per kind.
#[test]
fn c07_gradient_checks() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for kind in [ProbeKind::Linear, ProbeKind::Mlp, ProbeKind::AttentionPool] {
        for instance in 0..20u64 {
            let mut rng = child_rng(4000, instance);
            let dim = rng.gen_range(2..=6);
            let hidden = rng.gen_range(2..=8);
            let init_seed: u64 = rng.gen();
            let mut model = probe::ProbeModel::init(kind, dim, hidden, init_seed);
            // The attention query starts at zero by design; randomize it so
            // the softmax backward path is exercised.
            if kind == ProbeKind::AttentionPool {
                for v in model.params_mut()[..dim].iter_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
            let samples: Vec<(TokenFeatureSequence, Label)> = (0..3)
                .map(|i| {
                    let tokens: Vec<Vec<f64>> = (0..rng.gen_range(1..=6))
                        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
                        .collect();
                    let label = if i % 2 == 0 {
                        Label::Member
                    } else {
                        Label::NonMember
                    };
                    (
                        TokenFeatureSequence::new(format!("g{instance}_{i}"), tokens, Some(label))
                            .unwrap(),
                        label,
                    )
                })
                .collect();
            let report = probe::grad_check(&model, &samples, 1e-5).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{kind:?} instance {instance}: rel error {}",
                report.max_rel_error
            );
            worst = worst.max(report.max_rel_error);
        }
    }
    pass(
        "c07 gradient checks",
        format!("60 instances, worst relative error {worst:.2e}"),
    );
}

/// Criterion 8: in one dimension the sliced distance telescopes to the
/// exact 1D Wasserstein distance for any seed and projection count.
#[test]
fn c08_swd_matches_1d_wasserstein() {
    let mut worst = 0.0f64;
    for instance in 0..50u64 {
        let mut rng = seeded(5000 + instance);
        let n = rng.gen_range(1..=80);
        let xs: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 4.0)
            .collect();
        let ys: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 4.0)
            .collect();
        let q = if instance % 2 == 0 { 2.0 } else { 1.0 };
        let exact = shift::wasserstein_1d(&xs, &ys, q).unwrap();
        let xs_v: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let ys_v: Vec<Vec<f64>> = ys.iter().map(|&y| vec![y]).collect();
        let n_proj = rng.gen_range(1..=64);
        let seed: u64 = rng.gen();
        let sliced = shift::sliced_wasserstein(&xs_v, &ys_v, n_proj, q, seed).unwrap();
        let diff = (sliced - exact).abs();
        assert!(
            diff <= 1e-9,
            "instance {instance}: SWD {sliced} vs exact {exact} (n={n}, q={q}, n_proj={n_proj})"
        );
        worst = worst.max(diff);
    }
    pass(
        "c08 SWD exactness in 1D",
        format!("50 instances, worst |difference| = {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical CLI outputs across thread counts.

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_miaudit")
}

fn run_cli(args: &[&str]) {
    let output = std::process::Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

/// Criterion 9: every subcommand, run twice with identical inputs and seed
/// at --threads 1 and --threads 8, produces byte-identical output trees.
#[test]
fn c09_cli_determinism_across_thread_counts() {
    let root = std::env::temp_dir().join("miaudit-acceptance-det");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let fixtures = root.join("fixtures");
    std::fs::create_dir_all(&fixtures).unwrap();

    // Shared fixtures generated once.
    run_cli(&[
        "synth",
        "traces",
        "--n",
        "40",
        "--trace-len",
        "12",
        "--vocab",
        "16",
        "--signal",
        "1",
        "--seed",
        "3",
        "--out-dir",
        fixtures.join("traces").to_str().unwrap(),
    ]);
    run_cli(&[
        "synth",
        "embeddings",
        "--n",
        "80",
        "--dim",
        "8",
        "--delta",
        "1",
        "--seed",
        "3",
        "--out-dir",
        fixtures.join("emb").to_str().unwrap(),
    ]);
    run_cli(&[
        "synth",
        "images",
        "--n",
        "8",
        "--height",
        "16",
        "--width",
        "16",
        "--blur",
        "2",
        "--seed",
        "3",
        "--out-dir",
        fixtures.join("img").to_str().unwrap(),
    ]);
    let traces = fixtures.join("traces/traces.jsonl");
    let trace_labels = fixtures.join("traces/labels.csv");
    let merged = fixtures.join("emb/merged.csv");
    let emb_labels = fixtures.join("emb/labels.csv");
    let s1 = fixtures.join("emb/s1.csv");
    let s2 = fixtures.join("emb/s2.csv");
    let image_glob = fixtures.join("img/images/*.pgm");

    // Pre-score once so eval/setinfer have inputs.
    run_cli(&[
        "score",
        "--traces",
        traces.to_str().unwrap(),
        "--method",
        "min_k",
        "--k",
        "20",
        "--out-dir",
        fixtures.join("scores").to_str().unwrap(),
    ]);
    let scores = fixtures.join("scores/scores.csv");

    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "synth",
            vec![
                "synth",
                "traces",
                "--n",
                "20",
                "--trace-len",
                "8",
                "--vocab",
                "8",
                "--signal",
                "0.5",
                "--seed",
                "11",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "score",
            vec![
                "score",
                "--traces",
                traces.to_str().unwrap(),
                "--method",
                "min_kpp",
                "--k",
                "30",
                "--segment",
                "desp",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "eval",
            vec![
                "eval",
                "--scores",
                scores.to_str().unwrap(),
                "--labels",
                trace_labels.to_str().unwrap(),
                "--curve-csv",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "wired",
            vec![
                "wired",
                "--space",
                &format!("embed={},{}", s1.display(), s2.display()),
                "--n-proj",
                "64",
                "--repeats",
                "6",
                "--seed",
                "9",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "freq",
            vec![
                "freq",
                "--images",
                image_glob.to_str().unwrap(),
                "--bands",
                "8",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "ber",
            vec![
                "ber",
                "--features",
                merged.to_str().unwrap(),
                "--labels",
                emb_labels.to_str().unwrap(),
                "--min-size",
                "5",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "probe",
            vec![
                "probe",
                "--train",
                merged.to_str().unwrap(),
                "--train-labels",
                emb_labels.to_str().unwrap(),
                "--test",
                merged.to_str().unwrap(),
                "--test-labels",
                emb_labels.to_str().unwrap(),
                "--kind",
                "mlp",
                "--hidden",
                "16",
                "--epochs",
                "15",
                "--seed",
                "4",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "setinfer",
            vec![
                "setinfer",
                "--scores",
                scores.to_str().unwrap(),
                "--labels",
                trace_labels.to_str().unwrap(),
                "--sizes",
                "1,5,20",
                "--n-sets",
                "300",
                "--seed",
                "13",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
    ];

    for (name, base_args) in &commands {
        let mut trees = Vec::new();
        for (tag, threads) in [("t1", "1"), ("t8", "8"), ("t1b", "1")] {
            let out = root.join(format!("{name}-{tag}"));
            let mut args: Vec<String> = base_args.clone();
            args.push("--threads".into());
            args.push(threads.into());
            args.push("--out-dir".into());
            args.push(out.display().to_string());
            let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
            run_cli(&arg_refs);
            trees.push(tree_bytes(&out));
        }
        assert_eq!(
            trees[0], trees[1],
            "{name}: outputs differ between --threads 1 and --threads 8"
        );
        assert_eq!(trees[0], trees[2], "{name}: outputs differ across reruns");
    }
    pass(
        "c09 CLI determinism",
        format!(
            "{} subcommands byte-identical across threads 1/8 and reruns",
            commands.len()
        ),
    );
}

/// Criterion 10: the direct-definition DFT and the fast path agree within
/// 1e-6 relative on random power-of-two images; a constant image yields a
/// DC-only spectrum.
#[test]
fn c10_dft_direct_vs_fast() {
    let mut worst = 0.0f64;
    let mut rng = seeded(8000);
    for instance in 0..20 {
        let h = 1usize << rng.gen_range(2..=5);
        let w = 1usize << rng.gen_range(2..=5);
        let data: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>() * 255.0).collect();
        let image = miaudit_core::model::GrayImage::new(h, w, data).unwrap();
        let direct = shift::dft_magnitude_direct(&image);
        let fast = shift::dft_magnitude_fast(&image).expect("power-of-two dims");
        let mut num = 0.0;
        let mut den = 0.0;
        for (row_a, row_b) in direct.iter().zip(&fast) {
            for (a, b) in row_a.iter().zip(row_b) {
                num += (a - b) * (a - b);
                den += a * a;
            }
        }
        let rel = (num / den).sqrt();
        assert!(
            rel < 1e-6,
            "instance {instance} ({h}x{w}): relative error {rel}"
        );
        worst = worst.max(rel);
    }

    // Constant image: everything lands in the DC bin.
    let c = 119.0;
    let (h, w) = (16, 16);
    let image = miaudit_core::model::GrayImage::new(h, w, vec![c; h * w]).unwrap();
    let limit = 1e-9 * (h * w) as f64 * c;
    for spectrum in [
        shift::dft_magnitude_direct(&image),
        shift::dft_magnitude_fast(&image).unwrap(),
    ] {
        for (u, row) in spectrum.iter().enumerate() {
            for (v, &m) in row.iter().enumerate() {
                if (u, v) == (h / 2, w / 2) {
                    assert!((m - (h * w) as f64 * c).abs() < limit);
                } else {
                    assert!(m < limit, "off-center bin ({u},{v}) = {m}");
                }
            }
        }
    }
    pass(
        "c10 DFT correctness",
        format!("20 images, worst relative error {worst:.2e}; constant image is DC-only"),
    );
}
