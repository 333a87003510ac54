//! `miaudit wired`: distribution-shift ratio over embedding spaces.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use miaudit_core::io;

use crate::common::{ensure_out_dir, write_json, Resolver};
use crate::manifest::RunManifest;

#[derive(ClapArgs)]
pub struct Args {
    /// Embedding space spec `NAME=S1.csv,S2.csv`; repeatable, one per space.
    #[arg(long = "space", required = true)]
    spaces: Vec<String>,

    /// Random projection directions per SWD evaluation.
    #[arg(long)]
    n_proj: Option<usize>,

    /// Wasserstein power.
    #[arg(long)]
    q: Option<f64>,

    /// Subset-resampling repeats averaged into each ratio.
    #[arg(long)]
    repeats: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_space_spec(spec: &str) -> Result<(String, PathBuf, PathBuf)> {
    let (name, paths) = spec
        .split_once('=')
        .with_context(|| format!("space spec `{spec}` must look like NAME=S1.csv,S2.csv"))?;
    let (p1, p2) = paths
        .split_once(',')
        .with_context(|| format!("space spec `{spec}` needs two comma-separated paths"))?;
    if name.is_empty() {
        bail!("space spec `{spec}` has an empty name");
    }
    Ok((name.to_string(), PathBuf::from(p1), PathBuf::from(p2)))
}

pub fn run(args: Args, config: Option<&Path>) -> Result<()> {
    let mut resolver = Resolver::new(config)?;
    let n_proj = resolver.usize("n_proj", args.n_proj, 128)?;
    let q = resolver.f64("q", args.q, 2.0)?;
    let repeats = resolver.usize("repeats", args.repeats, 10)?;
    let seed = resolver.u64("seed", args.seed, 0)?;
    resolver.note("spaces", serde_json::Value::from(args.spaces.clone()));

    let mut manifest = RunManifest::new("wired");
    manifest.seed = Some(seed);

    let mut spaces = Vec::new();
    for spec in &args.spaces {
        let (name, p1, p2) = parse_space_spec(spec)?;
        let s1 =
            io::parse_embeddings_file(&p1).with_context(|| format!("parsing {}", p1.display()))?;
        let s2 =
            io::parse_embeddings_file(&p2).with_context(|| format!("parsing {}", p2.display()))?;
        if s1.dim != s2.dim {
            bail!("space {name}: dim mismatch ({} vs {})", s1.dim, s2.dim);
        }
        manifest.add_input(&p1)?;
        manifest.add_input(&p2)?;
        spaces.push((name, s1.vectors(), s2.vectors()));
    }

    let report = miaudit_core::shift::wired(&spaces, n_proj, q, repeats, seed)?;
    ensure_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("wired.json"), &report)?;

    manifest.params = resolver.into_params();
    manifest.add_output("wired.json");
    manifest.add_output("manifest.json");
    manifest.write(&args.out_dir)
}
