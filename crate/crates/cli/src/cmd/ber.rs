//! `miaudit ber`: graph-based Bayes error rate of a labeled feature table.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use miaudit_core::ber::BerParams;
use miaudit_core::io;
use miaudit_core::model::Label;

use crate::common::{ensure_out_dir, write_json, Resolver};
use crate::manifest::RunManifest;

#[derive(ClapArgs)]
pub struct Args {
    /// Features CSV (`id,f1..fd`).
    #[arg(long)]
    features: PathBuf,

    /// Labels CSV (`id,label`); every feature row needs a label.
    #[arg(long)]
    labels: PathBuf,

    /// Neighbors of the label-spreading graph.
    #[arg(long)]
    k: Option<usize>,

    /// Neighbors of the sparser confident-component graph.
    #[arg(long)]
    confident_k: Option<usize>,

    /// Minimum same-label component size counted as confident.
    #[arg(long)]
    min_size: Option<usize>,

    /// Label-spreading mixing coefficient.
    #[arg(long)]
    alpha: Option<f64>,

    #[arg(long)]
    max_iter: Option<usize>,

    #[arg(long)]
    tol: Option<f64>,

    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(args: Args, config: Option<&Path>) -> Result<()> {
    let defaults = BerParams::default();
    let mut resolver = Resolver::new(config)?;
    let params = BerParams {
        k: resolver.usize("k", args.k, defaults.k)?,
        confident_k: resolver.usize("confident_k", args.confident_k, defaults.confident_k)?,
        min_component_size: resolver.usize(
            "min_size",
            args.min_size,
            defaults.min_component_size,
        )?,
        alpha: resolver.f64("alpha", args.alpha, defaults.alpha)?,
        max_iter: resolver.usize("max_iter", args.max_iter, defaults.max_iter)?,
        tol: resolver.f64("tol", args.tol, defaults.tol)?,
    };
    resolver.note("features", args.features.display().to_string());
    resolver.note("labels", args.labels.display().to_string());

    let space = io::parse_embeddings_file(&args.features)
        .with_context(|| format!("parsing {}", args.features.display()))?;
    let labeled = io::parse_labels_file(&args.labels)
        .with_context(|| format!("parsing {}", args.labels.display()))?;

    let mut features = Vec::with_capacity(space.len());
    let mut labels: Vec<Label> = Vec::with_capacity(space.len());
    for (id, row) in space.iter() {
        let label = labeled
            .get(id)
            .with_context(|| format!("no label for id {id}"))?;
        features.push(row.to_vec());
        labels.push(label);
    }
    if features.is_empty() {
        bail!("feature table is empty");
    }

    let report = miaudit_core::ber::estimate_ber(&features, &labels, &params)?;
    ensure_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("ber.json"), &report)?;

    let mut manifest = RunManifest::new("ber");
    manifest.add_input(&args.features)?;
    manifest.add_input(&args.labels)?;
    manifest.params = resolver.into_params();
    manifest.add_output("ber.json");
    manifest.add_output("manifest.json");
    manifest.write(&args.out_dir)
}
