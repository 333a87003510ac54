//! Distribution-shift quantification between two image subsets.
//!
//! Frequency features: the centered magnitude spectrum of the 2D DFT and
//! mean magnitudes over `K` concentric bands. Discrepancy: the sliced
//! Wasserstein distance (exact 1D optimal transport averaged over random
//! unit directions) and WiRED, the ratio of the cross-subset distance to
//! one subset's internal variation, maximized over embedding spaces.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Sub};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::GrayImage;
use crate::rng::{child_rng, child_seed};
use crate::stats::dot;

#[derive(Debug, Error)]
pub enum ShiftError {
    #[error("sample sets must have equal size, got {0} and {1}")]
    SizeMismatch(usize, usize),
    #[error("vectors must share one dimension, got {0} and {1}")]
    DimMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("{0}")]
    BadParam(String),
    #[error("degenerate internal variation (denominator SWD is zero)")]
    DegenerateInternalVariation,
}

// ---------------------------------------------------------------------------
// 2D DFT

#[derive(Clone, Copy, Debug, Default)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Complex {
        Complex { re, im }
    }

    fn from_angle(theta: f64) -> Complex {
        Complex::new(theta.cos(), theta.sin())
    }

    fn magnitude(self) -> f64 {
        self.re.hypot(self.im)
    }
}

impl Add for Complex {
    type Output = Complex;
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for Complex {
    type Output = Complex;
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

/// Shift a raw spectrum so the zero-frequency bin lands at
/// `(height/2, width/2)`.
fn center_shift(raw: Vec<Vec<Complex>>) -> Vec<Vec<f64>> {
    let h = raw.len();
    let w = raw[0].len();
    let mut out = vec![vec![0.0; w]; h];
    for (u, row) in raw.iter().enumerate() {
        for (v, &value) in row.iter().enumerate() {
            out[(u + h / 2) % h][(v + w / 2) % w] = value.magnitude();
        }
    }
    out
}

/// Direct evaluation of the transform definition, row sums then column
/// sums with precomputed twiddles. Serves as the reference path.
pub fn dft_magnitude_direct(image: &GrayImage) -> Vec<Vec<f64>> {
    let h = image.height;
    let w = image.width;
    let twiddle_w: Vec<Vec<Complex>> = (0..w)
        .map(|v| {
            (0..w)
                .map(|y| {
                    Complex::from_angle(-2.0 * std::f64::consts::PI * (v * y) as f64 / w as f64)
                })
                .collect()
        })
        .collect();
    // Inner transform along y for every row x.
    let rows: Vec<Vec<Complex>> = (0..h)
        .into_par_iter()
        .map(|x| {
            (0..w)
                .map(|v| {
                    let mut acc = Complex::default();
                    for (y, t) in twiddle_w[v].iter().enumerate() {
                        let i = image.get(x, y);
                        acc = acc + Complex::new(i * t.re, i * t.im);
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let twiddle_h: Vec<Vec<Complex>> = (0..h)
        .map(|u| {
            (0..h)
                .map(|x| {
                    Complex::from_angle(-2.0 * std::f64::consts::PI * (u * x) as f64 / h as f64)
                })
                .collect()
        })
        .collect();
    let raw: Vec<Vec<Complex>> = (0..h)
        .into_par_iter()
        .map(|u| {
            (0..w)
                .map(|v| {
                    let mut acc = Complex::default();
                    for x in 0..h {
                        acc = acc + twiddle_h[u][x] * rows[x][v];
                    }
                    acc
                })
                .collect()
        })
        .collect();
    center_shift(raw)
}

/// Iterative radix-2 Cooley-Tukey over one slice (length must be a power of
/// two).
fn fft_inplace(data: &mut [Complex]) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i as u32).reverse_bits() >> (32 - bits);
        let j = j as usize;
        if i < j {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = -2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let tw = Complex::from_angle(step * k as f64);
                let a = data[start + k];
                let b = data[start + k + half] * tw;
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
}

/// Fast separable path for power-of-two dimensions. Returns `None` when a
/// dimension is not a power of two.
pub fn dft_magnitude_fast(image: &GrayImage) -> Option<Vec<Vec<f64>>> {
    let h = image.height;
    let w = image.width;
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return None;
    }
    let mut rows: Vec<Vec<Complex>> = (0..h)
        .into_par_iter()
        .map(|x| {
            let mut row: Vec<Complex> =
                (0..w).map(|y| Complex::new(image.get(x, y), 0.0)).collect();
            fft_inplace(&mut row);
            row
        })
        .collect();
    // Columns.
    let columns: Vec<Vec<Complex>> = (0..w)
        .into_par_iter()
        .map(|v| {
            let mut col: Vec<Complex> = (0..h).map(|x| rows[x][v]).collect();
            fft_inplace(&mut col);
            col
        })
        .collect();
    for (u, row) in rows.iter_mut().enumerate() {
        for (v, value) in row.iter_mut().enumerate() {
            *value = columns[v][u];
        }
    }
    Some(center_shift(rows))
}

/// Centered magnitude spectrum; uses the fast path when both dimensions are
/// powers of two, the direct definition otherwise.
pub fn dft_magnitude(image: &GrayImage) -> Vec<Vec<f64>> {
    dft_magnitude_fast(image).unwrap_or_else(|| dft_magnitude_direct(image))
}

// ---------------------------------------------------------------------------
// Band energies

/// Mean spectrum magnitudes over `K` concentric bands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEnergyVector {
    pub energies: Vec<f64>,
}

impl BandEnergyVector {
    pub fn band_count(&self) -> usize {
        self.energies.len()
    }
}

/// Partition the centered spectrum into `K` bands by axis-normalized radius
/// from the center (so non-square images get isotropic bands) and average
/// the magnitudes per band. Empty bands score 0.
pub fn band_energies(image: &GrayImage, bands: usize) -> Result<BandEnergyVector, ShiftError> {
    if bands == 0 {
        return Err(ShiftError::BadParam("band count must be >= 1".into()));
    }
    let spectrum = dft_magnitude(image);
    Ok(band_energies_of_spectrum(&spectrum, bands))
}

/// Band energies of an already-computed centered spectrum.
pub fn band_energies_of_spectrum(spectrum: &[Vec<f64>], bands: usize) -> BandEnergyVector {
    let h = spectrum.len();
    let w = spectrum[0].len();
    let cu = (h / 2) as f64;
    let cv = (w / 2) as f64;
    let radius = |u: usize, v: usize| -> f64 {
        let du = if h > 1 {
            (u as f64 - cu) / (h as f64 / 2.0)
        } else {
            0.0
        };
        let dv = if w > 1 {
            (v as f64 - cv) / (w as f64 / 2.0)
        } else {
            0.0
        };
        (du * du + dv * dv).sqrt()
    };
    let mut r_max = 0.0f64;
    for u in 0..h {
        for v in 0..w {
            r_max = r_max.max(radius(u, v));
        }
    }
    let mut sums = vec![0.0; bands];
    let mut counts = vec![0usize; bands];
    for (u, row) in spectrum.iter().enumerate() {
        for (v, &m) in row.iter().enumerate() {
            let band = if r_max == 0.0 {
                0
            } else {
                (((bands as f64) * radius(u, v) / r_max) as usize).min(bands - 1)
            };
            sums[band] += m;
            counts[band] += 1;
        }
    }
    let energies = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    BandEnergyVector { energies }
}

// ---------------------------------------------------------------------------
// Wasserstein distances

/// Exact 1D q-Wasserstein distance between equal-size samples: sorted
/// pairing of order statistics.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64], q: f64) -> Result<f64, ShiftError> {
    if xs.len() != ys.len() {
        return Err(ShiftError::SizeMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(ShiftError::TooFewSamples { need: 1, got: 0 });
    }
    if q < 1.0 {
        return Err(ShiftError::BadParam(format!("q must be >= 1, got {q}")));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let total: f64 = if q == 1.0 {
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
    } else if q == 2.0 {
        a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum()
    } else {
        a.iter().zip(&b).map(|(x, y)| (x - y).abs().powf(q)).sum()
    };
    let mean = total / n;
    Ok(if q == 1.0 {
        mean
    } else if q == 2.0 {
        mean.sqrt()
    } else {
        mean.powf(1.0 / q)
    })
}

fn check_vector_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize, ShiftError> {
    if a.len() != b.len() {
        return Err(ShiftError::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(ShiftError::TooFewSamples { need: 1, got: 0 });
    }
    let dim = a[0].len();
    for v in a.iter().chain(b.iter()) {
        if v.len() != dim {
            return Err(ShiftError::DimMismatch(dim, v.len()));
        }
    }
    if dim == 0 {
        return Err(ShiftError::BadParam("vector dim must be >= 1".into()));
    }
    Ok(dim)
}

/// A unit direction on the (d-1)-sphere: standard-normal vector normalized
/// to unit length.
fn unit_direction<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Sliced Wasserstein distance: mean of exact 1D distances over `n_proj`
/// seeded random unit directions. Direction `j` draws from the substream
/// `(seed, j)`, so results do not depend on scheduling.
pub fn sliced_wasserstein(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    n_proj: usize,
    q: f64,
    seed: u64,
) -> Result<f64, ShiftError> {
    let dim = check_vector_sets(a, b)?;
    if n_proj == 0 {
        return Err(ShiftError::BadParam("n_proj must be >= 1".into()));
    }
    let per_direction: Result<Vec<f64>, ShiftError> = (0..n_proj)
        .into_par_iter()
        .map(|j| {
            let mut rng = child_rng(seed, j as u64);
            let theta = unit_direction(&mut rng, dim);
            let proj_a: Vec<f64> = a.iter().map(|v| dot(&theta, v)).collect();
            let proj_b: Vec<f64> = b.iter().map(|v| dot(&theta, v)).collect();
            wasserstein_1d(&proj_a, &proj_b, q)
        })
        .collect();
    let values = per_direction?;
    Ok(values.iter().sum::<f64>() / n_proj as f64)
}

// ---------------------------------------------------------------------------
// WiRED

/// Ratio statistics for one embedding space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpaceRatio {
    /// Mean over repeats of SWD(S11, S2') / SWD(S11, S12).
    pub ratio: f64,
    /// Mean numerator SWD across repeats.
    pub numerator_swd: f64,
    /// Mean denominator SWD across repeats.
    pub denominator_swd: f64,
    pub subset_size: usize,
    pub repeats: usize,
    pub per_repeat: Vec<f64>,
}

/// WiRED for one space: per repeat, split a permutation of `s1` into two
/// disjoint halves S11/S12 of size `n = min(|s1|/2, |s2|)`, draw a
/// size-matched S2' from `s2`, and take SWD(S11, S2') / SWD(S11, S12). The
/// same directions serve numerator and denominator within one repeat.
pub fn wired_space(
    s1: &[Vec<f64>],
    s2: &[Vec<f64>],
    n_proj: usize,
    q: f64,
    repeats: usize,
    seed: u64,
) -> Result<SpaceRatio, ShiftError> {
    if s1.len() < 4 {
        return Err(ShiftError::TooFewSamples {
            need: 4,
            got: s1.len(),
        });
    }
    if s2.len() < 2 {
        return Err(ShiftError::TooFewSamples {
            need: 2,
            got: s2.len(),
        });
    }
    if repeats == 0 {
        return Err(ShiftError::BadParam("repeats must be >= 1".into()));
    }
    let dim = s1[0].len();
    for v in s1.iter().chain(s2.iter()) {
        if v.len() != dim {
            return Err(ShiftError::DimMismatch(dim, v.len()));
        }
    }
    let n = (s1.len() / 2).min(s2.len());

    let per_repeat: Result<Vec<(f64, f64)>, ShiftError> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let repeat_seed = child_seed(seed, r as u64);
            let mut rng = child_rng(repeat_seed, 0);
            let mut idx1: Vec<usize> = (0..s1.len()).collect();
            idx1.shuffle(&mut rng);
            let s11: Vec<Vec<f64>> = idx1[..n].iter().map(|&i| s1[i].clone()).collect();
            let s12: Vec<Vec<f64>> = idx1[n..2 * n].iter().map(|&i| s1[i].clone()).collect();
            let mut idx2: Vec<usize> = (0..s2.len()).collect();
            idx2.shuffle(&mut rng);
            let s2p: Vec<Vec<f64>> = idx2[..n].iter().map(|&i| s2[i].clone()).collect();

            let direction_seed = child_seed(repeat_seed, 1);
            let numerator = sliced_wasserstein(&s11, &s2p, n_proj, q, direction_seed)?;
            let denominator = sliced_wasserstein(&s11, &s12, n_proj, q, direction_seed)?;
            if denominator == 0.0 {
                return Err(ShiftError::DegenerateInternalVariation);
            }
            Ok((numerator, denominator))
        })
        .collect();
    let pairs = per_repeat?;
    let ratios: Vec<f64> = pairs.iter().map(|(num, den)| num / den).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(SpaceRatio {
        ratio: mean(&ratios),
        numerator_swd: mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()),
        denominator_swd: mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()),
        subset_size: n,
        repeats,
        per_repeat: ratios,
    })
}

/// Full report: per-space ratios and the maximum across spaces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WiredReport {
    pub per_space: BTreeMap<String, SpaceRatio>,
    #[serde(rename = "final")]
    pub final_score: f64,
    pub seed: u64,
    pub n_proj: usize,
    pub q: f64,
    pub repeats: usize,
}

/// One embedding space for [`wired`]: `(name, S1 rows, S2 rows)`.
pub type SpaceInput = (String, Vec<Vec<f64>>, Vec<Vec<f64>>);

pub fn wired(
    spaces: &[SpaceInput],
    n_proj: usize,
    q: f64,
    repeats: usize,
    seed: u64,
) -> Result<WiredReport, ShiftError> {
    if spaces.is_empty() {
        return Err(ShiftError::BadParam("need at least one space".into()));
    }
    let mut per_space = BTreeMap::new();
    let mut final_score = f64::NEG_INFINITY;
    for (index, (name, s1, s2)) in spaces.iter().enumerate() {
        let stats = wired_space(s1, s2, n_proj, q, repeats, child_seed(seed, index as u64))?;
        final_score = final_score.max(stats.ratio);
        per_space.insert(name.clone(), stats);
    }
    Ok(WiredReport {
        per_space,
        final_score,
        seed,
        n_proj,
        q,
        repeats,
    })
}
