//! `miaudit` — membership-inference auditing pipeline as subcommands.
//!
//! Every subcommand writes its outputs under `--out-dir` with fixed file
//! names plus a `manifest.json` recording resolved parameters and input
//! digests. All randomness flows from `--seed` (default 0); reruns with the
//! same inputs and seed are byte-identical at any `--threads` setting.

mod cmd;
mod common;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "miaudit",
    version,
    about = "Membership-inference auditing: trace scoring, shift metrics, probes, BER, set inference"
)]
struct Cli {
    /// Cap internal parallelism (0 uses all cores). Results never depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// JSON object with parameter defaults; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score traces with a membership-inference method.
    Score(cmd::score::Args),
    /// Evaluate a score table against labels (AUC, TPR@FPR, ROC curve).
    Eval(cmd::eval::Args),
    /// WiRED distribution-shift ratio over one or more embedding spaces.
    Wired(cmd::wired::Args),
    /// Frequency band-energy features for PGM images.
    Freq(cmd::freq::Args),
    /// Graph-based Bayes error rate of a labeled feature table.
    Ber(cmd::ber::Args),
    /// Train and evaluate a membership probe.
    Probe(cmd::probe::Args),
    /// Aggregation-based set inference over bootstrap-sampled sets.
    Setinfer(cmd::setinfer::Args),
    /// Generate synthetic fixtures (traces, embeddings, images).
    Synth(cmd::synth::Args),
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Must happen before any rayon use; ignore the error if a pool
        // already exists (only possible in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Score(args) => cmd::score::run(args, config),
        Command::Eval(args) => cmd::eval::run(args, config),
        Command::Wired(args) => cmd::wired::run(args, config),
        Command::Freq(args) => cmd::freq::run(args, config),
        Command::Ber(args) => cmd::ber::run(args, config),
        Command::Probe(args) => cmd::probe::run(args, config),
        Command::Setinfer(args) => cmd::setinfer::run(args, config),
        Command::Synth(args) => cmd::synth::run(args, config),
    };
    if let Err(err) = result {
        // One machine-parseable line; the chain keeps the context.
        eprintln!("error: {}", format!("{err:#}").replace('\n', " "));
        std::process::exit(1);
    }
}
