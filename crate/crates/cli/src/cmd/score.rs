//! `miaudit score`: per-sample MI scores for a trace file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use miaudit_core::io;
use miaudit_core::mi::MiMethod;
use miaudit_core::model::SegmentFilter;

use crate::common::{compact_f64, ensure_out_dir, parse_sweep, Resolver};
use crate::manifest::RunManifest;

/// K value standing in for the k -> 0+ limit when a sweep includes 0:
/// selects the single lowest-logprob step.
const K_LIMIT: f64 = 1e-9;

#[derive(ClapArgs)]
pub struct Args {
    /// Trace JSONL file.
    #[arg(long)]
    traces: PathBuf,

    /// One of: perplexity, min_k, min_kpp, max_prob_gap, max_renyi_k,
    /// mod_renyi, image_consistency (groups trace ids by `image#sample`).
    #[arg(long)]
    method: String,

    /// Top/bottom selection percentage for min_k, min_kpp, max_renyi_k.
    #[arg(long)]
    k: Option<f64>,

    /// Renyi order for max_renyi_k and mod_renyi (1 requests the Shannon limit).
    #[arg(long)]
    alpha: Option<f64>,

    /// Segment filter: inst, desp, or both.
    #[arg(long)]
    segment: Option<String>,

    /// Emit one table per K over an inclusive START:END:STEP grid
    /// (e.g. 0:90:10); K=0 maps to the single-step limit.
    #[arg(long)]
    sweep_k: Option<String>,

    #[arg(long)]
    out_dir: PathBuf,
}

fn build_method(name: &str, k: Option<f64>, alpha: Option<f64>) -> Result<MiMethod> {
    let need_k = || k.with_context(|| format!("method {name} requires --k"));
    let need_alpha = || alpha.with_context(|| format!("method {name} requires --alpha"));
    Ok(match name {
        "perplexity" => MiMethod::Perplexity,
        "min_k" => MiMethod::MinK {
            k_percent: need_k()?,
        },
        "min_kpp" => MiMethod::MinKpp {
            k_percent: need_k()?,
        },
        "max_prob_gap" => MiMethod::MaxProbGap,
        "max_renyi_k" => MiMethod::MaxRenyiK {
            alpha: need_alpha()?,
            k_percent: need_k()?,
        },
        "mod_renyi" => MiMethod::ModRenyi {
            alpha: need_alpha()?,
        },
        "image_consistency" => MiMethod::ImageOnlyConsistency,
        other => bail!("unknown method `{other}`"),
    })
}

pub fn run(args: Args, config: Option<&Path>) -> Result<()> {
    let mut resolver = Resolver::new(config)?;
    let method_name = args.method;
    let k = resolver.opt_f64("k", args.k)?;
    let alpha = resolver.opt_f64("alpha", args.alpha)?;
    let segment_text = resolver.string("segment", args.segment, "both")?;
    let segment: SegmentFilter = segment_text
        .parse()
        .map_err(|e: String| anyhow::anyhow!(e))?;
    let sweep = resolver.opt_string("sweep_k", args.sweep_k)?;
    resolver.note("method", method_name.clone());
    resolver.note("traces", args.traces.display().to_string());

    let traces = io::parse_traces_file(&args.traces)
        .with_context(|| format!("parsing {}", args.traces.display()))?;
    ensure_out_dir(&args.out_dir)?;

    let mut manifest = RunManifest::new("score");
    manifest.add_input(&args.traces)?;

    match sweep {
        None => {
            let method = build_method(&method_name, k, alpha)?;
            let table = io_score(&traces, &method, segment, None)?;
            io::write_score_table(
                &args.out_dir.join("scores.csv"),
                &args.out_dir.join("scores.meta.json"),
                &table,
            )?;
            manifest.add_output("scores.csv");
            manifest.add_output("scores.meta.json");
        }
        Some(spec) => {
            if matches!(
                method_name.as_str(),
                "perplexity" | "max_prob_gap" | "mod_renyi" | "image_consistency"
            ) {
                bail!("--sweep-k does not apply to method {method_name}");
            }
            for nominal in parse_sweep(&spec)? {
                let effective = if nominal == 0.0 { K_LIMIT } else { nominal };
                let method = build_method(&method_name, Some(effective), alpha)?;
                let table = io_score(&traces, &method, segment, Some(nominal))?;
                let stem = format!("scores_k{}", compact_f64(nominal));
                io::write_score_table(
                    &args.out_dir.join(format!("{stem}.csv")),
                    &args.out_dir.join(format!("{stem}.meta.json")),
                    &table,
                )?;
                manifest.add_output(&format!("{stem}.csv"));
                manifest.add_output(&format!("{stem}.meta.json"));
            }
        }
    }

    manifest.params = resolver.into_params();
    manifest.add_output("manifest.json");
    manifest.write(&args.out_dir)
}

fn io_score(
    traces: &[miaudit_core::model::GenerationTrace],
    method: &MiMethod,
    segment: SegmentFilter,
    nominal_k: Option<f64>,
) -> Result<miaudit_core::model::ScoreTable> {
    let mut table = miaudit_core::mi::score_dataset(traces, method, segment)?;
    if let Some(nominal) = nominal_k {
        // Record the swept grid value, not the limit stand-in.
        table.params.insert("k_percent".into(), nominal.into());
    }
    Ok(table)
}
