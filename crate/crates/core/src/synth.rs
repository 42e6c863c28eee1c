//! Planted-partition graphs with a controlled Newman modularity.
//!
//! Nodes are split into `k` contiguous blocks of near-equal size. With
//! degree shares proportional to block sizes, the modularity of the planted
//! labels is `Q = f_in − Σ_b (n_b/n)²`, where `f_in` is the fraction of edges
//! inside blocks. Solving for `f_in` fixes the intra/inter edge counts, and
//! each class of pairs is then sampled uniformly without replacement.

use crate::graph::Graph;
use crate::rng;
use ndarray::Array2;
use rand::seq::index;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Standard deviation of the Gaussian jitter added to one-hot block features.
pub const FEATURE_JITTER: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("modularity {target} is unreachable: {reason}")]
    Infeasible { target: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedPartition {
    pub n: usize,
    pub k: usize,
    pub target_modularity: f64,
    pub avg_degree: f64,
}

/// Closed-form edge allocation for a planted partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub block_sizes: Vec<usize>,
    pub intra_edges: usize,
    pub inter_edges: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl PlantedPartition {
    pub fn plan(&self) -> Result<PartitionPlan, SynthError> {
        let &Self {
            n,
            k,
            target_modularity: q,
            avg_degree,
        } = self;
        if k == 0 || n < k {
            return Err(SynthError::Invalid(format!("need n ≥ k ≥ 1, got n={n}, k={k}")));
        }
        if !(0.0..1.0).contains(&q) {
            return Err(SynthError::Invalid(format!("modularity {q} outside [0, 1)")));
        }
        if !(avg_degree > 0.0 && avg_degree.is_finite()) {
            return Err(SynthError::Invalid(format!("average degree {avg_degree} must be > 0")));
        }
        let block_sizes = block_sizes(n, k);
        let share: f64 = block_sizes.iter().map(|&b| (b as f64 / n as f64).powi(2)).sum();
        let f_in = q + share;
        let infeasible = |reason: String| SynthError::Infeasible { target: q, reason };
        if f_in > 1.0 + 1e-12 {
            return Err(infeasible(format!(
                "needs intra-edge fraction {f_in:.3} > 1 with k={k}"
            )));
        }
        let m = (n as f64 * avg_degree / 2.0).round() as usize;
        let intra_pairs: usize = block_sizes.iter().map(|&b| b * b.saturating_sub(1) / 2).sum();
        let inter_pairs = n * (n - 1) / 2 - intra_pairs;
        let intra_edges = (f_in.min(1.0) * m as f64).round() as usize;
        let inter_edges = m - intra_edges;
        if intra_edges > intra_pairs {
            return Err(infeasible(format!(
                "{intra_edges} intra-block edges requested, only {intra_pairs} pairs (lower the degree or k)"
            )));
        }
        if inter_edges > inter_pairs {
            return Err(infeasible(format!(
                "{inter_edges} inter-block edges requested, only {inter_pairs} pairs"
            )));
        }
        let ratio = |e: usize, p: usize| if p == 0 { 0.0 } else { e as f64 / p as f64 };
        Ok(PartitionPlan {
            p_in: ratio(intra_edges, intra_pairs),
            p_out: ratio(inter_edges, inter_pairs),
            block_sizes,
            intra_edges,
            inter_edges,
        })
    }
}

fn block_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|b| n / k + usize::from(b < n % k)).collect()
}

/// Generates a planted-partition graph and its block labels.
pub fn synth_cluster_graph(
    n: usize,
    k: usize,
    target_modularity: f64,
    avg_degree: f64,
    seed: u64,
) -> Result<(Graph, Vec<usize>), SynthError> {
    let plan = PlantedPartition {
        n,
        k,
        target_modularity,
        avg_degree,
    }
    .plan()?;
    let mut labels = Vec::with_capacity(n);
    let mut block_end = Vec::with_capacity(n);
    let mut start = 0;
    for (b, &size) in plan.block_sizes.iter().enumerate() {
        for _ in 0..size {
            labels.push(b);
            block_end.push(start + size);
        }
        start += size;
    }

    // Pairs (i, j>i) inside i's block have j in (i, end_i); across blocks j in [end_i, n).
    let intra = PairClass::new((0..n).map(|i| (i + 1, block_end[i])));
    let inter = PairClass::new((0..n).map(|i| (block_end[i], n)));

    let mut r = rng::rng(seed);
    let mut edges = Vec::with_capacity(plan.intra_edges + plan.inter_edges);
    for (class, count) in [(&intra, plan.intra_edges), (&inter, plan.inter_edges)] {
        edges.extend(
            index::sample(&mut r, class.total(), count)
                .into_iter()
                .map(|idx| class.unrank(idx)),
        );
    }

    let jitter = Normal::new(0.0, FEATURE_JITTER).expect("valid normal");
    let mut features = Array2::zeros((n, k));
    for (i, &b) in labels.iter().enumerate() {
        for c in 0..k {
            features[[i, c]] = f64::from(u8::from(b == c)) + jitter.sample(&mut r);
        }
    }
    let g = Graph::new(n, edges, features).expect("generated pairs are valid");
    Ok((g, labels))
}

/// Pairs `(i, j)` with `j` in a contiguous per-row range, indexable by rank.
struct PairClass {
    ranges: Vec<(usize, usize)>,
    prefix: Vec<usize>,
}

impl PairClass {
    fn new(ranges: impl Iterator<Item = (usize, usize)>) -> Self {
        let ranges: Vec<(usize, usize)> = ranges.collect();
        let mut prefix = Vec::with_capacity(ranges.len() + 1);
        prefix.push(0);
        for &(lo, hi) in &ranges {
            prefix.push(prefix.last().unwrap() + hi.saturating_sub(lo));
        }
        Self { ranges, prefix }
    }

    fn total(&self) -> usize {
        *self.prefix.last().unwrap()
    }

    fn unrank(&self, idx: usize) -> (usize, usize) {
        let row = self.prefix.partition_point(|&p| p <= idx) - 1;
        (row, self.ranges[row].0 + idx - self.prefix[row])
    }
}

/// Newman modularity of a hard labeling: `Σ_c [m_c/m − (vol_c/2m)²]`.
pub fn modularity(g: &Graph, labels: &[usize]) -> f64 {
    assert_eq!(labels.len(), g.n(), "label count");
    let m = g.num_edges() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let blocks = labels.iter().max().map_or(0, |&b| b + 1);
    let mut inside = vec![0.0; blocks];
    let mut volume = vec![0.0; blocks];
    for &(i, j) in g.edges() {
        if labels[i] == labels[j] {
            inside[labels[i]] += 1.0;
        }
        volume[labels[i]] += 1.0;
        volume[labels[j]] += 1.0;
    }
    inside
        .iter()
        .zip(&volume)
        .map(|(e, v)| e / m - (v / (2.0 * m)).powi(2))
        .sum()
}
