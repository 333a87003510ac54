//! `miaudit probe`: train a membership probe and evaluate it on a test set.
//!
//! Inputs are either sequence JSONL files (`{"id","label","tokens":[[..]]}`)
//! or embeddings CSV (each row becomes a single-token sequence); labels come
//! inline or from a labels CSV. Multi-seed runs report mean and standard
//! deviation of the test metrics; the saved model is the run with the best
//! validation AUC.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use miaudit_core::eval;
use miaudit_core::io;
use miaudit_core::model::{Label, LabeledDataset};
use miaudit_core::probe::{self, Hyperparams, ProbeKind, TokenFeatureSequence, TrainReport};
use miaudit_core::rng::child_seed;
use serde::Serialize;

use crate::common::{ensure_out_dir, parse_f64_list, write_json, Resolver};
use crate::manifest::RunManifest;

#[derive(ClapArgs)]
pub struct Args {
    /// Training data: sequence JSONL or embeddings CSV.
    #[arg(long)]
    train: PathBuf,

    /// Labels CSV for the training data (required for CSV inputs, optional
    /// override for JSONL).
    #[arg(long)]
    train_labels: Option<PathBuf>,

    /// Test data in the same formats.
    #[arg(long)]
    test: PathBuf,

    #[arg(long)]
    test_labels: Option<PathBuf>,

    /// Probe kind: linear, mlp, or attention.
    #[arg(long)]
    kind: Option<String>,

    /// Independent training runs, seeded from child seeds of --seed
    /// (default 5; reports mean and standard deviation across runs).
    #[arg(long)]
    seeds: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    hidden: Option<usize>,

    #[arg(long)]
    lr: Option<f64>,

    #[arg(long)]
    batch: Option<usize>,

    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long)]
    patience: Option<usize>,

    /// Fraction of the training data held out for validation.
    #[arg(long)]
    val_frac: Option<f64>,

    /// Comma-separated FPR targets for the test report.
    #[arg(long)]
    targets: Option<String>,

    #[arg(long)]
    out_dir: PathBuf,
}

/// Load sequences from JSONL or CSV, attaching labels from a sidecar file
/// when given (sidecar wins over inline labels).
fn load_sequences(
    data: &Path,
    labels: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<Vec<TokenFeatureSequence>> {
    manifest.add_input(data)?;
    let labeled: Option<LabeledDataset> = match labels {
        Some(path) => {
            manifest.add_input(path)?;
            Some(
                io::parse_labels_file(path)
                    .with_context(|| format!("parsing {}", path.display()))?,
            )
        }
        None => None,
    };
    let is_jsonl = data
        .extension()
        .map(|e| e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    let mut sequences = if is_jsonl {
        io::parse_sequences_file(data).with_context(|| format!("parsing {}", data.display()))?
    } else {
        let space = io::parse_embeddings_file(data)
            .with_context(|| format!("parsing {}", data.display()))?;
        probe::sequences_from_embeddings(&space, None)
    };
    if let Some(labeled) = labeled {
        for seq in &mut sequences {
            if let Some(label) = labeled.get(&seq.id) {
                seq.label = Some(label);
            }
        }
    }
    Ok(sequences)
}

#[derive(Serialize)]
struct SeedOutcome {
    seed: u64,
    best_val_auc: f64,
    test_auc: f64,
    test_acc: f64,
    test_tpr: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct ProbeSummary {
    kind: ProbeKind,
    runs: usize,
    auc_mean: f64,
    auc_std: f64,
    acc_mean: f64,
    acc_std: f64,
    tpr_mean: BTreeMap<String, f64>,
    tpr_std: BTreeMap<String, f64>,
    per_seed: Vec<SeedOutcome>,
}

fn accuracy(probabilities: &[f64], labels: &[Label]) -> f64 {
    let correct = probabilities
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| (p > 0.5) == (l == Label::Member))
        .count();
    correct as f64 / labels.len() as f64
}

pub fn run(args: Args, config: Option<&Path>) -> Result<()> {
    let defaults = Hyperparams::default();
    let mut resolver = Resolver::new(config)?;
    let kind_text = resolver.string("kind", args.kind, "linear")?;
    let kind: ProbeKind = kind_text.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let n_seeds = resolver.usize("seeds", args.seeds, 5)?;
    let seed = resolver.u64("seed", args.seed, 0)?;
    let hyper = Hyperparams {
        hidden_width: resolver.usize("hidden", args.hidden, defaults.hidden_width)?,
        learning_rate: resolver.f64("lr", args.lr, defaults.learning_rate)?,
        batch_size: resolver.usize("batch", args.batch, defaults.batch_size)?,
        max_epochs: resolver.usize("epochs", args.epochs, defaults.max_epochs)?,
        patience: resolver.usize("patience", args.patience, defaults.patience)?,
        ..defaults
    };
    let val_frac = resolver.f64("val_frac", args.val_frac, 0.2)?;
    let targets_text = resolver.string("targets", args.targets, "0.05")?;
    let targets = parse_f64_list(&targets_text)?;
    if n_seeds == 0 {
        bail!("--seeds must be >= 1");
    }
    resolver.note("train", args.train.display().to_string());
    resolver.note("test", args.test.display().to_string());

    let mut manifest = RunManifest::new("probe");
    manifest.seed = Some(seed);
    let train_data = load_sequences(&args.train, args.train_labels.as_deref(), &mut manifest)?;
    let test_data = load_sequences(&args.test, args.test_labels.as_deref(), &mut manifest)?;

    let test_labels: Vec<Label> = test_data
        .iter()
        .map(|s| {
            s.label
                .with_context(|| format!("test sequence {} is unlabeled", s.id))
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, probe::ProbeModel, TrainReport, eval::RocResult)> = None;
    let mut outcomes = Vec::new();
    for run_idx in 0..n_seeds {
        let run_seed = if n_seeds == 1 {
            seed
        } else {
            child_seed(seed, run_idx as u64)
        };
        let (train_split, val_split) = probe::split_train_val(&train_data, val_frac, run_seed);
        let (model, report) = probe::train_probe(&train_split, &val_split, kind, &hyper, run_seed)?;

        let probabilities = probe::predict(&model, &test_data)?;
        let (pos, neg): (Vec<_>, Vec<_>) = probabilities
            .iter()
            .zip(&test_labels)
            .partition(|(_, &l)| l == Label::Member);
        let pos: Vec<f64> = pos.into_iter().map(|(&p, _)| p).collect();
        let neg: Vec<f64> = neg.into_iter().map(|(&p, _)| p).collect();
        let roc = eval::evaluate_pools(&pos, &neg, &targets)?;

        outcomes.push(SeedOutcome {
            seed: run_seed,
            best_val_auc: report.best_val_auc,
            test_auc: roc.auc,
            test_acc: accuracy(&probabilities, &test_labels),
            test_tpr: roc.tpr_at_fpr.clone(),
        });
        let better = best
            .as_ref()
            .is_none_or(|(val, ..)| report.best_val_auc > *val);
        if better {
            best = Some((report.best_val_auc, model, report, roc));
        }
    }
    let (_, model, report, roc) = best.expect("at least one run");

    let mean_std = |values: Vec<f64>| {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        (mean, var.sqrt())
    };
    let (auc_mean, auc_std) = mean_std(outcomes.iter().map(|o| o.test_auc).collect());
    let (acc_mean, acc_std) = mean_std(outcomes.iter().map(|o| o.test_acc).collect());
    let mut tpr_mean = BTreeMap::new();
    let mut tpr_std = BTreeMap::new();
    for key in outcomes[0].test_tpr.keys() {
        let (mean, std) = mean_std(outcomes.iter().map(|o| o.test_tpr[key]).collect());
        tpr_mean.insert(key.clone(), mean);
        tpr_std.insert(key.clone(), std);
    }
    let summary = ProbeSummary {
        kind,
        runs: n_seeds,
        auc_mean,
        auc_std,
        acc_mean,
        acc_std,
        tpr_mean,
        tpr_std,
        per_seed: outcomes,
    };

    ensure_out_dir(&args.out_dir)?;
    model.write_file(&args.out_dir.join("model.json"))?;
    write_json(&args.out_dir.join("train_report.json"), &report)?;
    write_json(&args.out_dir.join("roc.json"), &roc)?;
    write_json(&args.out_dir.join("probe_summary.json"), &summary)?;

    manifest.params = resolver.into_params();
    for name in [
        "model.json",
        "train_report.json",
        "roc.json",
        "probe_summary.json",
    ] {
        manifest.add_output(name);
    }
    manifest.add_output("manifest.json");
    manifest.write(&args.out_dir)
}
