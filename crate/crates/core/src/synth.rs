//! Deterministic synthetic benchmark generator.
//!
//! Three fixture families with ground-truth-controlled knobs: embedding
//! pairs with a mean shift `delta`, token traces with a membership signal
//! `s` (the top logit of member steps is sharpened by `1 + s`), and
//! white-noise image pairs where one side is box-blurred. Identical configs
//! produce byte-identical outputs; every sample draws from its own
//! generator substream.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{EmbeddingSpace, GenerationTrace, GrayImage, Label, Segment, TokenStep};
use crate::rng::{child_rng, child_seed};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0}")]
    BadConfig(String),
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Samples per class (members and non-members, or S1 and S2 sides).
    pub n_per_class: usize,
    /// Embedding dimension.
    pub dim: usize,
    /// Mean shift applied to the first coordinate of the second embedding set.
    pub delta: f64,
    /// Membership signal: member steps get their largest logit scaled by `1 + s`.
    pub signal: f64,
    /// Vocabulary size of generated traces.
    pub vocab: usize,
    /// Steps per trace.
    pub trace_len: usize,
    pub height: usize,
    pub width: usize,
    /// Box blur radius; the kernel is `(2b+1) x (2b+1)`, edge-clamped.
    pub blur_radius: usize,
    /// Sampled traces per image id (> 1 enables consistency scoring; ids
    /// become `m0001#0`, `m0001#1`, ...).
    pub samples_per_image: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_per_class: 300,
            dim: 16,
            delta: 0.0,
            signal: 0.0,
            vocab: 64,
            trace_len: 32,
            height: 32,
            width: 32,
            blur_radius: 2,
            samples_per_image: 1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let mut problems = Vec::new();
        if self.n_per_class == 0 {
            problems.push("n_per_class must be >= 1");
        }
        if self.dim == 0 {
            problems.push("dim must be >= 1");
        }
        if self.vocab < 2 {
            problems.push("vocab must be >= 2");
        }
        if self.trace_len == 0 {
            problems.push("trace_len must be >= 1");
        }
        if self.height == 0 || self.width == 0 {
            problems.push("image dimensions must be >= 1");
        }
        if self.samples_per_image == 0 {
            problems.push("samples_per_image must be >= 1");
        }
        if self.delta < 0.0 {
            problems.push("delta must be >= 0");
        }
        if self.signal < 0.0 {
            problems.push("signal must be >= 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SynthError::BadConfig(problems.join("; ")))
        }
    }
}

// Stream tags keep the three generators independent of each other.
const STREAM_EMBED_S1: u64 = 1;
const STREAM_EMBED_S2: u64 = 2;
const STREAM_TRACES: u64 = 3;
const STREAM_IMAGES_SHARP: u64 = 4;
const STREAM_IMAGES_BLUR: u64 = 5;

/// Two embedding spaces: S1 standard normal, S2 normal with mean
/// `(delta, 0, ..., 0)`.
pub fn gen_shifted_embeddings(
    config: &SynthConfig,
) -> Result<(EmbeddingSpace, EmbeddingSpace), SynthError> {
    config.validate()?;
    if config.n_per_class < 4 {
        return Err(SynthError::BadConfig(
            "n_per_class must be >= 4 for shift fixtures".into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let make = |stream: u64, prefix: &str, shift: f64| {
        let rows: Vec<(String, Vec<f64>)> = (0..config.n_per_class)
            .into_par_iter()
            .map(|i| {
                let mut rng = child_rng(child_seed(config.seed, stream), i as u64);
                let row: Vec<f64> = (0..config.dim)
                    .map(|j| normal.sample(&mut rng) + if j == 0 { shift } else { 0.0 })
                    .collect();
                (format!("{prefix}{i:04}"), row)
            })
            .collect();
        EmbeddingSpace::new(
            if prefix == "a" { "s1" } else { "s2" },
            rows.into_iter().collect(),
        )
        .expect("generated rows are uniform")
    };
    Ok((
        make(STREAM_EMBED_S1, "a", 0.0),
        make(STREAM_EMBED_S2, "b", config.delta),
    ))
}

fn softmax_logprobs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - max - log_sum).collect()
}

fn sample_categorical<R: Rng>(rng: &mut R, logprobs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &lp) in logprobs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logprobs.len() - 1
}

/// Labeled traces: `n_per_class` members then `n_per_class` non-members.
/// Per step, logits are standard normal over the vocabulary; member steps
/// get their largest logit scaled by `1 + signal`. The chosen token is
/// sampled from the resulting distribution. With `samples_per_image > 1`
/// the per-step distributions are shared across an image's samples and ids
/// carry a `#k` suffix.
pub fn gen_traces(config: &SynthConfig) -> Result<Vec<GenerationTrace>, SynthError> {
    config.validate()?;
    let n_images = config.n_per_class * 2;
    let instruction_steps = config.trace_len / 4;
    let traces: Vec<GenerationTrace> = (0..n_images)
        .into_par_iter()
        .flat_map_iter(|image_idx| {
            let member = image_idx < config.n_per_class;
            let label = if member {
                Label::Member
            } else {
                Label::NonMember
            };
            let image_id = if member {
                format!("m{image_idx:04}")
            } else {
                format!("n{:04}", image_idx - config.n_per_class)
            };
            let image_seed = child_seed(child_seed(config.seed, STREAM_TRACES), image_idx as u64);

            // One distribution sequence per image, shared by all its samples.
            let mut dist_rng = child_rng(image_seed, 0);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let step_logprobs: Vec<Vec<f64>> = (0..config.trace_len)
                .map(|_| {
                    let mut logits: Vec<f64> = (0..config.vocab)
                        .map(|_| normal.sample(&mut dist_rng))
                        .collect();
                    if member && config.signal > 0.0 {
                        let top = logits
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.total_cmp(b.1))
                            .map(|(i, _)| i)
                            .expect("vocab >= 2");
                        logits[top] *= 1.0 + config.signal;
                    }
                    softmax_logprobs(&logits)
                })
                .collect();

            (0..config.samples_per_image)
                .map(|sample| {
                    let mut choose_rng = child_rng(image_seed, 1 + sample as u64);
                    let steps: Vec<TokenStep> = step_logprobs
                        .iter()
                        .enumerate()
                        .map(|(t, logprobs)| {
                            let segment = if t < instruction_steps {
                                Segment::Instruction
                            } else {
                                Segment::Description
                            };
                            let chosen = sample_categorical(&mut choose_rng, logprobs);
                            TokenStep::full(segment, chosen, logprobs.clone())
                                .expect("generated distributions are normalized")
                        })
                        .collect();
                    let id = if config.samples_per_image > 1 {
                        format!("{image_id}#{sample}")
                    } else {
                        image_id.clone()
                    };
                    GenerationTrace::new(id, steps, Some(label)).expect("trace_len >= 1")
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(traces)
}

fn box_blur(image: &GrayImage, radius: usize) -> GrayImage {
    if radius == 0 {
        return image.clone();
    }
    let h = image.height as isize;
    let w = image.width as isize;
    let r = radius as isize;
    let area = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = Vec::with_capacity(image.pixels().len());
    for x in 0..h {
        for y in 0..w {
            let mut acc = 0.0;
            for dx in -r..=r {
                for dy in -r..=r {
                    let cx = (x + dx).clamp(0, h - 1) as usize;
                    let cy = (y + dy).clamp(0, w - 1) as usize;
                    acc += image.get(cx, cy);
                }
            }
            out.push(acc / area);
        }
    }
    GrayImage::new(image.height, image.width, out).expect("blur preserves range")
}

/// White-noise image pairs: the sharp set is uniform integer noise in
/// `[0, 255]`; the blurred set is independent noise convolved with the box
/// kernel. `blur_radius = 0` yields two sharp sets with the same law.
pub fn gen_images(config: &SynthConfig) -> Result<(Vec<GrayImage>, Vec<GrayImage>), SynthError> {
    config.validate()?;
    let noise_image = |stream: u64, i: usize| {
        let mut rng = child_rng(child_seed(config.seed, stream), i as u64);
        let data: Vec<f64> = (0..config.height * config.width)
            .map(|_| rng.gen_range(0..=255u32) as f64)
            .collect();
        GrayImage::new(config.height, config.width, data).expect("noise in range")
    };
    let sharp: Vec<GrayImage> = (0..config.n_per_class)
        .into_par_iter()
        .map(|i| noise_image(STREAM_IMAGES_SHARP, i))
        .collect();
    let blurred: Vec<GrayImage> = (0..config.n_per_class)
        .into_par_iter()
        .map(|i| box_blur(&noise_image(STREAM_IMAGES_BLUR, i), config.blur_radius))
        .collect();
    Ok((sharp, blurred))
}
