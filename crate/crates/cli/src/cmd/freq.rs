//! `miaudit freq`: frequency band-energy features for PGM images.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use miaudit_core::io;
use miaudit_core::model::EmbeddingSpace;
use rayon::prelude::*;

use crate::common::{ensure_out_dir, Resolver};
use crate::manifest::RunManifest;

#[derive(ClapArgs)]
pub struct Args {
    /// PGM files or glob patterns (quote globs to bypass the shell).
    #[arg(long = "images", required = true, num_args = 1..)]
    images: Vec<String>,

    /// Number of concentric frequency bands.
    #[arg(long)]
    bands: Option<usize>,

    #[arg(long)]
    out_dir: PathBuf,
}

fn expand(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for pattern in patterns {
        let literal = Path::new(pattern);
        if literal.is_file() {
            paths.push(literal.to_path_buf());
            continue;
        }
        let mut matched = false;
        for entry in glob::glob(pattern).with_context(|| format!("bad glob pattern `{pattern}`"))? {
            paths.push(entry?);
            matched = true;
        }
        if !matched {
            bail!("no files match `{pattern}`");
        }
    }
    paths.sort();
    paths.dedup();
    Ok(paths)
}

pub fn run(args: Args, config: Option<&Path>) -> Result<()> {
    let mut resolver = Resolver::new(config)?;
    let bands = resolver.usize("bands", args.bands, 10)?;
    resolver.note("images", serde_json::Value::from(args.images.clone()));

    let paths = expand(&args.images)?;
    let mut manifest = RunManifest::new("freq");

    let features: Result<Vec<(String, Vec<f64>)>> = paths
        .par_iter()
        .map(|path| {
            let image =
                io::parse_pgm_file(path).with_context(|| format!("parsing {}", path.display()))?;
            let energies = miaudit_core::shift::band_energies(&image, bands)?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .with_context(|| format!("no file stem for {}", path.display()))?;
            Ok((id, energies.energies))
        })
        .collect();
    let mut rows = BTreeMap::new();
    for (id, energies) in features? {
        if rows.insert(id.clone(), energies).is_some() {
            bail!("duplicate image id `{id}` (file stems must be unique)");
        }
    }
    for path in &paths {
        manifest.add_input(path)?;
    }

    let space = EmbeddingSpace::new("freq", rows)?;
    ensure_out_dir(&args.out_dir)?;
    io::write_embeddings_file(&args.out_dir.join("freq.csv"), &space)?;

    manifest.params = resolver.into_params();
    manifest.add_output("freq.csv");
    manifest.add_output("manifest.json");
    manifest.write(&args.out_dir)
}
