//! Graph-based Bayes error rate estimation.
//!
//! A symmetric kNN graph with Gaussian edge weights carries the geometry;
//! confident regions are same-label BFS components above a size threshold,
//! everything else is uncertain and gets labeled by spreading the confident
//! seeds over the full graph. The estimate is the fraction of uncertain
//! samples the spreading labels incorrectly, normalized by the full sample
//! count.
//!
//! Confident components are carved on a sparser graph (`confident_k`) than
//! the one spreading runs on (`k`): with a dense graph the same-label
//! subgraph chains straight through class-overlap regions and the uncertain
//! set collapses to nothing, which floors the estimate near zero on
//! overlapping classes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Label;
use crate::stats::{l2_distance, standard_normal_cdf};

#[derive(Debug, Error)]
pub enum BerError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("k must satisfy 1 <= k < n, got k={k} for n={n}")]
    BadK { k: usize, n: usize },
    #[error("features and labels must align: {features} features, {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("both classes must be present")]
    SingleClass,
    #[error("{0}")]
    BadParam(String),
    #[error("sigma must be > 0, got {0}")]
    BadSigma(f64),
}

/// Symmetric kNN graph with Gaussian edge weights
/// `w_ij = exp(-d_ij^2 / sigma^2)`.
#[derive(Clone, Debug)]
pub struct NeighborGraph {
    pub n: usize,
    pub k: usize,
    /// Median retained edge distance (floored at 1e-12).
    pub sigma: f64,
    /// Per-node `(neighbor, weight)` lists; every edge appears in both
    /// endpoint lists.
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Build the symmetric kNN graph: an edge exists when either endpoint lists
/// the other among its k nearest by Euclidean distance (ties broken by
/// index). Duplicate points are fine; distance 0 gives weight 1.
pub fn build_graph(features: &[Vec<f64>], k: usize) -> Result<NeighborGraph, BerError> {
    let n = features.len();
    if n < 2 {
        return Err(BerError::TooFewSamples(n));
    }
    if k == 0 || k >= n {
        return Err(BerError::BadK { k, n });
    }
    // Brute-force neighbor lists; desk scale keeps n small enough.
    let nearest: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, l2_distance(&features[i], &features[j])))
                .collect();
            dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            dists.truncate(k);
            dists
        })
        .collect();

    // Symmetric closure, one entry per undirected edge.
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, list) in nearest.iter().enumerate() {
        for &(j, d) in list {
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                edges.push((key.0, key.1, d));
            }
        }
    }
    let mut distances: Vec<f64> = edges.iter().map(|e| e.2).collect();
    distances.sort_by(f64::total_cmp);
    let median = if distances.len() % 2 == 1 {
        distances[distances.len() / 2]
    } else {
        let hi = distances.len() / 2;
        (distances[hi - 1] + distances[hi]) / 2.0
    };
    let sigma = median.max(1e-12);

    let mut adjacency = vec![Vec::new(); n];
    for (i, j, d) in edges {
        let w = (-(d * d) / (sigma * sigma)).exp();
        adjacency[i].push((j, w));
        adjacency[j].push((i, w));
    }
    for list in &mut adjacency {
        list.sort_by_key(|&(j, _)| j);
    }
    Ok(NeighborGraph {
        n,
        k,
        sigma,
        adjacency,
    })
}

/// Outcome of the confident/uncertain split.
#[derive(Clone, Debug)]
pub struct ConfidentPartition {
    /// Per-node confident flag.
    pub confident: Vec<bool>,
    /// Indices of the uncertain set U.
    pub uncertain: Vec<usize>,
    /// Sizes of the confident components, largest first.
    pub component_sizes: Vec<usize>,
}

/// Split nodes into confident and uncertain sets: edges are restricted to
/// same-label pairs, BFS components of size >= `min_size` are confident.
pub fn confident_partition(
    graph: &NeighborGraph,
    labels: &[Label],
    min_size: usize,
) -> Result<ConfidentPartition, BerError> {
    if labels.len() != graph.n {
        return Err(BerError::LengthMismatch {
            features: graph.n,
            labels: labels.len(),
        });
    }
    let mut confident = vec![false; graph.n];
    let mut component_sizes = Vec::new();
    let mut visited = vec![false; graph.n];
    for start in 0..graph.n {
        if visited[start] {
            continue;
        }
        // BFS over same-label edges only.
        let mut queue = std::collections::VecDeque::from([start]);
        visited[start] = true;
        let mut component = vec![start];
        while let Some(node) = queue.pop_front() {
            for &(next, _) in graph.neighbors(node) {
                if !visited[next] && labels[next] == labels[start] {
                    visited[next] = true;
                    component.push(next);
                    queue.push_back(next);
                }
            }
        }
        if component.len() >= min_size {
            for &node in &component {
                confident[node] = true;
            }
            component_sizes.push(component.len());
        }
    }
    component_sizes.sort_unstable_by(|a, b| b.cmp(a));
    let uncertain: Vec<usize> = (0..graph.n).filter(|&i| !confident[i]).collect();
    Ok(ConfidentPartition {
        confident,
        uncertain,
        component_sizes,
    })
}

/// Outcome of the spreading iteration.
#[derive(Clone, Debug)]
pub struct SpreadResult {
    pub predictions: Vec<Label>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-abs change of the final iteration.
    pub last_delta: f64,
}

/// Label spreading: iterate `F <- alpha * S * F + (1 - alpha) * Y` with `S`
/// the symmetrically normalized weight matrix and `Y` the one-hot seeds,
/// until the max-abs change drops below `tol` or `max_iter` is reached.
/// Prediction is the row-wise argmax, ties going to class 0. If a class has
/// no seed, every node gets the majority seed class.
pub fn label_spread(
    graph: &NeighborGraph,
    seeds: &[Option<Label>],
    alpha: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SpreadResult, BerError> {
    if seeds.len() != graph.n {
        return Err(BerError::LengthMismatch {
            features: graph.n,
            labels: seeds.len(),
        });
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(BerError::BadParam(format!(
            "alpha must be in [0, 1), got {alpha}"
        )));
    }
    let n = graph.n;
    let seeded_members = seeds
        .iter()
        .flatten()
        .filter(|l| **l == Label::Member)
        .count();
    let seeded_non = seeds
        .iter()
        .flatten()
        .filter(|l| **l == Label::NonMember)
        .count();
    if seeded_members == 0 || seeded_non == 0 {
        // Degenerate seeding: fall back to the majority seed class
        // (class 0 when there are no seeds at all).
        let majority = if seeded_members > seeded_non {
            Label::Member
        } else {
            Label::NonMember
        };
        return Ok(SpreadResult {
            predictions: vec![majority; n],
            iterations: 0,
            converged: true,
            last_delta: 0.0,
        });
    }

    // Normalized weights s_ij = w_ij / sqrt(d_i d_j); isolated nodes keep
    // an all-zero row.
    let degree: Vec<f64> = (0..n)
        .map(|i| graph.neighbors(i).iter().map(|(_, w)| w).sum())
        .collect();
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();

    let y: Vec<[f64; 2]> = seeds
        .iter()
        .map(|s| match s {
            Some(Label::NonMember) => [1.0, 0.0],
            Some(Label::Member) => [0.0, 1.0],
            None => [0.0, 0.0],
        })
        .collect();
    let mut f = y.clone();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_delta = 0.0;
    for _ in 0..max_iter {
        iterations += 1;
        let next: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = [0.0f64; 2];
                for &(j, w) in graph.neighbors(i) {
                    let s = w * inv_sqrt[i] * inv_sqrt[j];
                    acc[0] += s * f[j][0];
                    acc[1] += s * f[j][1];
                }
                [
                    alpha * acc[0] + (1.0 - alpha) * y[i][0],
                    alpha * acc[1] + (1.0 - alpha) * y[i][1],
                ]
            })
            .collect();
        last_delta = next
            .iter()
            .zip(&f)
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0f64, f64::max);
        f = next;
        if last_delta < tol {
            converged = true;
            break;
        }
    }
    let predictions = f
        .iter()
        .map(|row| {
            if row[1] > row[0] {
                Label::Member
            } else {
                Label::NonMember
            }
        })
        .collect();
    Ok(SpreadResult {
        predictions,
        iterations,
        converged,
        last_delta,
    })
}

/// Parameters of the full estimation pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BerParams {
    /// Neighbors of the graph label spreading runs on.
    pub k: usize,
    /// Neighbors of the sparser graph confident components are carved on.
    pub confident_k: usize,
    pub min_component_size: usize,
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for BerParams {
    fn default() -> Self {
        BerParams {
            k: 10,
            confident_k: 3,
            min_component_size: 14,
            alpha: 0.9,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

/// Estimated Bayes error rate plus graph diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BerReport {
    /// Incorrect uncertain predictions over n.
    pub ber: f64,
    /// The same count normalized by |U| instead (0 when U is empty).
    pub ber_among_uncertain: f64,
    pub n: usize,
    pub uncertain_count: usize,
    pub confident_component_count: usize,
    pub confident_component_sizes: Vec<usize>,
    pub spread_iterations: usize,
    pub spread_converged: bool,
    pub params: BerParams,
}

/// Chain graph construction, confident partitioning, and label spreading;
/// count the incorrectly predicted uncertain samples.
pub fn estimate_ber(
    features: &[Vec<f64>],
    labels: &[Label],
    params: &BerParams,
) -> Result<BerReport, BerError> {
    if features.len() != labels.len() {
        return Err(BerError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    let members = labels.iter().filter(|l| **l == Label::Member).count();
    if members == 0 || members == labels.len() {
        return Err(BerError::SingleClass);
    }
    let carve_graph = build_graph(features, params.confident_k)?;
    let partition = confident_partition(&carve_graph, labels, params.min_component_size)?;
    let spread_graph = if params.k == params.confident_k {
        carve_graph
    } else {
        build_graph(features, params.k)?
    };
    let seeds: Vec<Option<Label>> = labels
        .iter()
        .zip(&partition.confident)
        .map(|(&l, &c)| if c { Some(l) } else { None })
        .collect();
    let spread = label_spread(
        &spread_graph,
        &seeds,
        params.alpha,
        params.max_iter,
        params.tol,
    )?;
    let incorrect = partition
        .uncertain
        .iter()
        .filter(|&&i| spread.predictions[i] != labels[i])
        .count();
    let n = labels.len();
    Ok(BerReport {
        ber: incorrect as f64 / n as f64,
        ber_among_uncertain: if partition.uncertain.is_empty() {
            0.0
        } else {
            incorrect as f64 / partition.uncertain.len() as f64
        },
        n,
        uncertain_count: partition.uncertain.len(),
        confident_component_count: partition.component_sizes.len(),
        confident_component_sizes: partition.component_sizes,
        spread_iterations: spread.iterations,
        spread_converged: spread.converged,
        params: params.clone(),
    })
}

/// Bayes error of two equal-prior 1D Gaussians with means `delta` apart and
/// shared standard deviation `sigma`: `Phi(-delta / (2 sigma))`. Test oracle
/// for the graph estimator.
pub fn gaussian_bayes_error(delta: f64, sigma: f64) -> Result<f64, BerError> {
    if sigma <= 0.0 {
        return Err(BerError::BadSigma(sigma));
    }
    Ok(standard_normal_cdf(-delta / (2.0 * sigma)))
}
