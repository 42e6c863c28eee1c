//! Denoising and clustering metrics.

use crate::graph::{Graph, GraphError};
use pathfinding::prelude::{kuhn_munkres, Matrix};
use std::collections::BTreeMap;
use thiserror::Error;

/// PSNR reported for identical graphs.
pub const PSNR_CAP: f64 = 150.0;
/// Default number of WL refinement rounds.
pub const WL_ITERATIONS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("PSNR needs at least 2 nodes")]
    TooSmall,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("prediction has {pred} entries, truth has {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("both graphs are empty; similarity undefined")]
    EmptyHistograms,
}

/// `10·log10(1/MSE)` with MSE the number of differing pairs over `n(n−1)`.
pub fn psnr(truth: &Graph, estimate: &Graph) -> Result<f64, MetricError> {
    let diff = truth.edge_difference(estimate)?;
    let n = truth.n();
    if n < 2 {
        return Err(MetricError::TooSmall);
    }
    if diff == 0 {
        return Ok(PSNR_CAP);
    }
    let mse = diff as f64 / (n * (n - 1)) as f64;
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Weisfeiler–Lehman subtree histogram, keyed by `(iteration, label)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WlFeature {
    pub histogram: BTreeMap<(usize, u64), usize>,
    pub iterations: usize,
}

impl WlFeature {
    pub fn dot(&self, other: &WlFeature) -> f64 {
        self.histogram
            .iter()
            .filter_map(|(k, &a)| other.histogram.get(k).map(|&b| a as f64 * b as f64))
            .sum()
    }
}

/// 64-bit FNV-1a.
fn fnv1a(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// WL features with degree initial labels.
pub fn wl_features(g: &Graph, h: usize) -> WlFeature {
    let initial: Vec<u64> = g.degrees().iter().map(|&d| d as u64).collect();
    wl_features_labeled(g, &initial, h)
}

/// WL features from the given initial labels.
pub fn wl_features_labeled(g: &Graph, initial: &[u64], h: usize) -> WlFeature {
    let neighbors = g.neighbors();
    let mut labels = initial.to_vec();
    let mut histogram = BTreeMap::new();
    for round in 0..=h {
        if round > 0 {
            labels = (0..g.n())
                .map(|v| {
                    let mut multiset: Vec<u64> = neighbors[v].iter().map(|&u| labels[u]).collect();
                    multiset.sort_unstable();
                    fnv1a(std::iter::once(labels[v]).chain(std::iter::once(u64::MAX)).chain(multiset))
                })
                .collect();
        }
        for &l in &labels {
            *histogram.entry((round, l)).or_insert(0) += 1;
        }
    }
    WlFeature {
        histogram,
        iterations: h,
    }
}

/// Cosine similarity of WL histograms.
pub fn wl_similarity(a: &Graph, b: &Graph, h: usize) -> Result<f64, MetricError> {
    let (fa, fb) = (wl_features(a, h), wl_features(b, h));
    let norm = (fa.dot(&fa) * fb.dot(&fb)).sqrt();
    if norm == 0.0 {
        return Err(MetricError::EmptyHistograms);
    }
    if fa == fb {
        return Ok(1.0);
    }
    Ok(fa.dot(&fb) / norm)
}

/// Clustering accuracy, NMI and macro F1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterScores {
    pub acc: f64,
    pub nmi: f64,
    pub f1: f64,
}

/// Scores a predicted clustering against ground-truth classes. Predicted
/// clusters are matched to classes by a maximum-weight assignment on the
/// confusion matrix; NMI uses the arithmetic mean of the two entropies.
pub fn cluster_metrics(pred: &[usize], truth: &[usize]) -> Result<ClusterScores, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let n = pred.len();
    if n == 0 {
        return Ok(ClusterScores {
            acc: 1.0,
            nmi: 1.0,
            f1: 1.0,
        });
    }
    let index = |xs: &[usize]| -> (Vec<usize>, usize) {
        let ids: BTreeMap<usize, usize> = xs
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(k, v)| (v, k))
            .collect();
        (xs.iter().map(|x| ids[x]).collect(), ids.len())
    };
    let (p, kp) = index(pred);
    let (t, kt) = index(truth);
    let mut confusion = vec![vec![0usize; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        confusion[a][b] += 1;
    }
    // Order predicted clusters by their confusion rows so the matching, and
    // therefore F1 under ties, does not depend on the ids `pred` happens to use.
    confusion.sort_unstable();

    let side = kp.max(kt);
    let weights = Matrix::from_fn(side, side, |(r, c)| {
        if r < kp && c < kt {
            confusion[r][c] as i64
        } else {
            0
        }
    });
    let (matched, assignment) = kuhn_munkres(&weights);
    let acc = matched as f64 / n as f64;

    let row: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..kt).map(|c| confusion.iter().map(|r| r[c]).sum()).collect();
    let nf = n as f64;
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let q = c as f64 / nf;
                -q * q.ln()
            })
            .sum()
    };
    let mut mi = 0.0;
    for a in 0..kp {
        for b in 0..kt {
            let c = confusion[a][b];
            if c > 0 {
                let joint = c as f64 / nf;
                mi += joint * (joint / ((row[a] as f64 / nf) * (col[b] as f64 / nf))).ln();
            }
        }
    }
    let (hp, ht) = (entropy(&row), entropy(&col));
    let nmi = if hp + ht == 0.0 { 1.0 } else { (2.0 * mi / (hp + ht)).clamp(0.0, 1.0) };

    // Macro F1 over truth classes under the matched labeling.
    let mut f1_sum = 0.0;
    for b in 0..kt {
        let a = (0..side).find(|&r| assignment[r] == b).filter(|&r| r < kp);
        let tp = a.map_or(0, |a| confusion[a][b]) as f64;
        let predicted = a.map_or(0, |a| row[a]) as f64;
        let actual = col[b] as f64;
        if tp > 0.0 {
            let precision = tp / predicted;
            let recall = tp / actual;
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(ClusterScores {
        acc,
        nmi,
        f1: f1_sum / kt as f64,
    })
}
