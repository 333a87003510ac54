//! Membership-inference auditing toolkit.
//!
//! The crate covers the full analytical pipeline for auditing whether samples
//! were part of a model's training data, operating on externally supplied
//! token traces, embedding tables, and images:
//!
//! * [`model`] — domain types plus bit-exact readers/writers (trace JSONL,
//!   embeddings/labels/scores CSV, PGM images).
//! * [`mi`] — per-sample membership-inference statistics (perplexity,
//!   Min-K%, Min-K%++, max probability gap, Rényi-entropy variants,
//!   image-only self-consistency).
//! * [`shift`] — distribution-shift quantification: DFT band energies,
//!   sliced Wasserstein distance, and the WiRED ratio.
//! * [`probe`] — linear / MLP / attention-pooling membership probes with
//!   deterministic Adam training and gradient checking.
//! * [`ber`] — graph-based Bayes error rate estimation (kNN graph, BFS
//!   confident components, label spreading).
//! * [`eval`] — threshold-free evaluation: midrank AUC, TPR at a target
//!   FPR, and bootstrap set-level inference.
//! * [`synth`] — deterministic synthetic benchmark generators with
//!   controllable shift, membership signal, and image sharpness.
//!
//! Everything that consumes randomness takes an explicit seed and derives
//! per-task substreams from it, so results are bit-identical across runs
//! and thread counts.

pub mod ber;
pub mod eval;
pub mod io;
pub mod mi;
pub mod model;
pub mod probe;
pub mod rng;
pub mod shift;
pub mod stats;
pub mod synth;

pub use model::{
    EmbeddingSpace, GenerationTrace, GrayImage, Label, LabeledDataset, Orientation, ScoreTable,
    Segment, TokenStep,
};
