//! `miaudit setinfer`: aggregation-based set inference over bootstrap sets.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use miaudit_core::eval::{self, Aggregator};
use miaudit_core::io;

use crate::common::{ensure_out_dir, parse_usize_list, write_json, Resolver};
use crate::manifest::RunManifest;

#[derive(ClapArgs)]
pub struct Args {
    /// Score CSV (`id,score`).
    #[arg(long)]
    scores: PathBuf,

    /// Sidecar metadata JSON; defaults to the score path with `.meta.json`.
    #[arg(long)]
    meta: Option<PathBuf>,

    /// Labels CSV (`id,label`).
    #[arg(long)]
    labels: PathBuf,

    /// Comma-separated set sizes.
    #[arg(long)]
    sizes: Option<String>,

    /// Bootstrap sets drawn per pool and size.
    #[arg(long)]
    n_sets: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Set aggregation: mean, median, or trimmed:FRACTION.
    #[arg(long)]
    aggregator: Option<String>,

    /// Orientation override when no metadata exists: higher or lower.
    #[arg(long)]
    orientation: Option<String>,

    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_aggregator(text: &str) -> Result<Aggregator> {
    match text {
        "mean" => Ok(Aggregator::Mean),
        "median" => Ok(Aggregator::Median),
        other => match other.strip_prefix("trimmed:") {
            Some(frac) => {
                let frac: f64 = frac
                    .parse()
                    .with_context(|| format!("bad trim fraction in `{other}`"))?;
                if !(0.0..0.5).contains(&frac) {
                    bail!("trim fraction must be in [0, 0.5)");
                }
                Ok(Aggregator::TrimmedMean(frac))
            }
            None => bail!("aggregator must be mean, median, or trimmed:FRACTION"),
        },
    }
}

pub fn run(args: Args, config: Option<&Path>) -> Result<()> {
    let mut resolver = Resolver::new(config)?;
    let sizes_text = resolver.string("sizes", args.sizes, "1,2,5,10,20,50,100")?;
    let sizes = parse_usize_list(&sizes_text)?;
    let n_sets = resolver.usize("n_sets", args.n_sets, 1000)?;
    let seed = resolver.u64("seed", args.seed, 0)?;
    let aggregator_text = resolver.string("aggregator", args.aggregator, "mean")?;
    let aggregator = parse_aggregator(&aggregator_text)?;
    resolver.note("scores", args.scores.display().to_string());
    resolver.note("labels", args.labels.display().to_string());

    let (table, meta_path, had_meta) = super::eval::load_score_table(
        &args.scores,
        args.meta.as_deref(),
        args.orientation.as_deref(),
    )?;
    let labeled = io::parse_labels_file(&args.labels)
        .with_context(|| format!("parsing {}", args.labels.display()))?;
    let (member, non_member) = eval::split_pools(&table, &labeled)?;

    let curve = eval::sweep_set_sizes(&member, &non_member, &sizes, n_sets, seed, aggregator)?;
    ensure_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("curve.json"), &curve)?;

    let mut manifest = RunManifest::new("setinfer");
    manifest.seed = Some(seed);
    manifest.add_input(&args.scores)?;
    if had_meta {
        manifest.add_input(&meta_path)?;
    }
    manifest.add_input(&args.labels)?;
    manifest.params = resolver.into_params();
    manifest.add_output("curve.json");
    manifest.add_output("manifest.json");
    manifest.write(&args.out_dir)
}
