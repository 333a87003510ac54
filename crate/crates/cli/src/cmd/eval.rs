//! `miaudit eval`: threshold-free evaluation of a score table.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use miaudit_core::io;
use miaudit_core::model::{Orientation, ScoreTable};

use crate::common::{ensure_out_dir, parse_f64_list, write_json, Resolver};
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

    /// Comma-separated FPR targets.
    #[arg(long)]
    targets: Option<String>,

    /// Orientation override when no metadata exists: higher or lower.
    #[arg(long)]
    orientation: Option<String>,

    /// Also dump the ROC points as CSV for plotting.
    #[arg(long)]
    curve_csv: bool,

    #[arg(long)]
    out_dir: PathBuf,
}

pub fn meta_path_for(scores: &Path, explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let mut name = scores
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scores".to_string());
            name.push_str(".meta.json");
            scores.with_file_name(name)
        }
    }
}

/// Load a score table, falling back to an explicit orientation when the
/// sidecar metadata is absent.
pub fn load_score_table(
    scores: &Path,
    meta: Option<&Path>,
    orientation_override: Option<&str>,
) -> Result<(ScoreTable, PathBuf, bool)> {
    let meta_path = meta_path_for(scores, meta);
    if meta_path.exists() {
        let table = io::read_score_table(scores, &meta_path)
            .with_context(|| format!("reading {}", scores.display()))?;
        Ok((table, meta_path, true))
    } else {
        let orientation = match orientation_override {
            Some("higher") => Orientation::HigherIsMember,
            Some("lower") => Orientation::LowerIsMember,
            Some(other) => bail!("orientation must be `higher` or `lower`, got `{other}`"),
            None => bail!(
                "no metadata at {}; pass --meta or --orientation",
                meta_path.display()
            ),
        };
        let raw = io::parse_scores(std::io::BufReader::new(
            std::fs::File::open(scores).with_context(|| format!("opening {}", scores.display()))?,
        ))?;
        let table = ScoreTable::new("scores", Default::default(), orientation, raw)?;
        Ok((table, meta_path, false))
    }
}

pub fn run(args: Args, config: Option<&Path>) -> Result<()> {
    let mut resolver = Resolver::new(config)?;
    let targets_text = resolver.string("targets", args.targets, "0.05")?;
    let targets = parse_f64_list(&targets_text)?;
    resolver.note("scores", args.scores.display().to_string());
    resolver.note("labels", args.labels.display().to_string());

    let (table, meta_path, had_meta) = load_score_table(
        &args.scores,
        args.meta.as_deref(),
        args.orientation.as_deref(),
    )?;
    let labels = io::parse_labels_file(&args.labels)
        .with_context(|| format!("parsing {}", args.labels.display()))?;

    let result = miaudit_core::eval::evaluate(&table, &labels, &targets)?;
    ensure_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("roc.json"), &result)?;

    let mut manifest = RunManifest::new("eval");
    manifest.add_input(&args.scores)?;
    if had_meta {
        manifest.add_input(&meta_path)?;
    }
    manifest.add_input(&args.labels)?;
    manifest.add_output("roc.json");

    if args.curve_csv {
        let path = args.out_dir.join("roc_points.csv");
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(file, "fpr,tpr")?;
        for (fpr, tpr) in &result.curve {
            writeln!(file, "{fpr},{tpr}")?;
        }
        file.flush()?;
        manifest.add_output("roc_points.csv");
        resolver.note("curve_csv", true);
    }

    manifest.params = resolver.into_params();
    manifest.add_output("manifest.json");
    manifest.write(&args.out_dir)
}
