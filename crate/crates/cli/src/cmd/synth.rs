//! `miaudit synth`: deterministic fixture generation.
//!
//! Writes the same formats the rest of the pipeline reads (trace JSONL,
//! embeddings/labels CSV, PGM images) plus a manifest recording the full
//! generator configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args as ClapArgs, Subcommand};
use miaudit_core::io;
use miaudit_core::model::{Label, LabeledDataset};
use miaudit_core::synth::{self, SynthConfig};

use crate::common::{ensure_out_dir, Resolver};
use crate::manifest::RunManifest;

#[derive(ClapArgs)]
pub struct Args {
    #[command(subcommand)]
    kind: Kind,
}

#[derive(Subcommand)]
enum Kind {
    /// Labeled token traces with a tunable membership signal.
    Traces {
        /// Traces per class.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        trace_len: Option<usize>,
        #[arg(long)]
        vocab: Option<usize>,
        /// Member top-logit sharpening factor is 1 + signal.
        #[arg(long)]
        signal: Option<f64>,
        /// Sampled traces per image id (ids gain a #k suffix when > 1).
        #[arg(long)]
        samples_per_image: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Two embedding CSVs, the second mean-shifted by delta.
    Embeddings {
        /// Rows per side.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sharp and box-blurred white-noise PGM sets.
    Images {
        /// Images per side.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Box blur radius for the second set (0 leaves it sharp).
        #[arg(long)]
        blur: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

pub fn run(args: Args, config: Option<&Path>) -> Result<()> {
    match args.kind {
        Kind::Traces {
            n,
            trace_len,
            vocab,
            signal,
            samples_per_image,
            seed,
            out_dir,
        } => {
            let defaults = SynthConfig::default();
            let mut resolver = Resolver::new(config)?;
            let config = SynthConfig {
                seed: resolver.u64("seed", seed, defaults.seed)?,
                n_per_class: resolver.usize("n", n, defaults.n_per_class)?,
                trace_len: resolver.usize("trace_len", trace_len, defaults.trace_len)?,
                vocab: resolver.usize("vocab", vocab, defaults.vocab)?,
                signal: resolver.f64("signal", signal, defaults.signal)?,
                samples_per_image: resolver.usize(
                    "samples_per_image",
                    samples_per_image,
                    defaults.samples_per_image,
                )?,
                ..defaults
            };
            let traces = synth::gen_traces(&config)?;
            ensure_out_dir(&out_dir)?;
            io::write_traces_file(&out_dir.join("traces.jsonl"), &traces)?;

            // Labels per scoring unit: one row per image group.
            let mut labels = LabeledDataset::default();
            for trace in &traces {
                let group = miaudit_core::mi::consistency_group(&trace.id);
                labels.insert(group, trace.label.expect("synth traces are labeled"));
            }
            io::write_labels_file(&out_dir.join("labels.csv"), &labels)?;

            let mut manifest = RunManifest::new("synth traces");
            manifest.seed = Some(config.seed);
            manifest.params = resolver.into_params();
            manifest.add_output("traces.jsonl");
            manifest.add_output("labels.csv");
            manifest.add_output("manifest.json");
            manifest.write(&out_dir)
        }
        Kind::Embeddings {
            n,
            dim,
            delta,
            seed,
            out_dir,
        } => {
            let defaults = SynthConfig::default();
            let mut resolver = Resolver::new(config)?;
            let config = SynthConfig {
                seed: resolver.u64("seed", seed, defaults.seed)?,
                n_per_class: resolver.usize("n", n, defaults.n_per_class)?,
                dim: resolver.usize("dim", dim, defaults.dim)?,
                delta: resolver.f64("delta", delta, defaults.delta)?,
                ..defaults
            };
            let (s1, s2) = synth::gen_shifted_embeddings(&config)?;
            ensure_out_dir(&out_dir)?;
            io::write_embeddings_file(&out_dir.join("s1.csv"), &s1)?;
            io::write_embeddings_file(&out_dir.join("s2.csv"), &s2)?;

            // Merged view for probe/BER runs: S1 rows are the members.
            let mut rows = BTreeMap::new();
            let mut labels = LabeledDataset::default();
            for (id, row) in s1.iter() {
                rows.insert(id.to_string(), row.to_vec());
                labels.insert(id, Label::Member);
            }
            for (id, row) in s2.iter() {
                rows.insert(id.to_string(), row.to_vec());
                labels.insert(id, Label::NonMember);
            }
            let merged = miaudit_core::model::EmbeddingSpace::new("merged", rows)?;
            io::write_embeddings_file(&out_dir.join("merged.csv"), &merged)?;
            io::write_labels_file(&out_dir.join("labels.csv"), &labels)?;

            let mut manifest = RunManifest::new("synth embeddings");
            manifest.seed = Some(config.seed);
            manifest.params = resolver.into_params();
            for name in [
                "s1.csv",
                "s2.csv",
                "merged.csv",
                "labels.csv",
                "manifest.json",
            ] {
                manifest.add_output(name);
            }
            manifest.write(&out_dir)
        }
        Kind::Images {
            n,
            height,
            width,
            blur,
            seed,
            out_dir,
        } => {
            let defaults = SynthConfig::default();
            let mut resolver = Resolver::new(config)?;
            let config = SynthConfig {
                seed: resolver.u64("seed", seed, defaults.seed)?,
                n_per_class: resolver.usize("n", n, defaults.n_per_class)?,
                height: resolver.usize("height", height, defaults.height)?,
                width: resolver.usize("width", width, defaults.width)?,
                blur_radius: resolver.usize("blur", blur, defaults.blur_radius)?,
                ..defaults
            };
            let (sharp, blurred) = synth::gen_images(&config)?;
            let image_dir = out_dir.join("images");
            ensure_out_dir(&image_dir)?;

            let mut labels = LabeledDataset::default();
            let mut manifest = RunManifest::new("synth images");
            for (i, image) in sharp.iter().enumerate() {
                let name = format!("sharp_{i:04}");
                io::write_pgm_file(&image_dir.join(format!("{name}.pgm")), image)?;
                labels.insert(&name, Label::Member);
                manifest.add_output(&format!("images/{name}.pgm"));
            }
            for (i, image) in blurred.iter().enumerate() {
                let name = format!("blur_{i:04}");
                io::write_pgm_file(&image_dir.join(format!("{name}.pgm")), image)?;
                labels.insert(&name, Label::NonMember);
                manifest.add_output(&format!("images/{name}.pgm"));
            }
            io::write_labels_file(&out_dir.join("labels.csv"), &labels)?;

            manifest.seed = Some(config.seed);
            manifest.params = resolver.into_params();
            manifest.add_output("labels.csv");
            manifest.add_output("manifest.json");
            manifest.write(&out_dir)
        }
    }
}
