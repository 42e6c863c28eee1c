//! Fixed-count edge noise: add ⌊add·|E|⌋ nonexistent edges, remove ⌊del·|E|⌋ existing ones.

use crate::graph::{Graph, GraphError};
use crate::rng;
use rand::seq::index;
use rand::Rng as _;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise spec: {0}")]
    InvalidSpec(String),
    #[error("cannot add {wanted} edges: only {available} nonexistent pairs")]
    PoolExhausted { wanted: usize, available: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub add_fraction: f64,
    pub del_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(add_fraction: f64, del_fraction: f64, seed: u64) -> Self {
        Self {
            add_fraction,
            del_fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.add_fraction >= 0.0 && self.add_fraction.is_finite()) {
            return Err(NoiseError::InvalidSpec(format!(
                "add_fraction {} must be a finite value ≥ 0",
                self.add_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.del_fraction) {
            return Err(NoiseError::InvalidSpec(format!(
                "del_fraction {} must lie in [0, 1]",
                self.del_fraction
            )));
        }
        Ok(())
    }

    /// `(additions, deletions)` for a graph with `m` edges.
    pub fn counts(&self, m: usize) -> (usize, usize) {
        let adds = (self.add_fraction * m as f64).floor() as usize;
        let dels = (self.del_fraction * m as f64).floor() as usize;
        (adds, dels.min(m))
    }
}

/// Applies `spec` to `g`. Added pairs are drawn from the pairs that are
/// non-edges in `g`, so a deleted edge is never re-added.
pub fn inject_noise(g: &Graph, spec: &NoiseSpec) -> Result<Graph, NoiseError> {
    spec.validate()?;
    let m = g.num_edges();
    let (n_add, n_del) = spec.counts(m);
    let n = g.n();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let available = total_pairs - m;
    if n_add > available {
        return Err(NoiseError::PoolExhausted {
            wanted: n_add,
            available,
        });
    }
    let mut r = rng::rng(spec.seed);

    let deleted: HashSet<usize> = index::sample(&mut r, m, n_del).into_iter().collect();
    let mut edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(k, _)| !deleted.contains(k))
        .map(|(_, &e)| e)
        .collect();

    if n_add > 0 {
        if 2 * n_add <= available {
            // Rejection sampling stays cheap while at most half of the pool is drawn.
            let existing = g.edge_set();
            let mut chosen = HashSet::with_capacity(n_add);
            let mut order = Vec::with_capacity(n_add);
            while order.len() < n_add {
                let i = r.random_range(0..n);
                let j = r.random_range(0..n);
                if i == j {
                    continue;
                }
                let pair = (i.min(j), i.max(j));
                if existing.contains(&pair) || !chosen.insert(pair) {
                    continue;
                }
                order.push(pair);
            }
            edges.extend(order);
        } else {
            let pool: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| !g.has_edge(i, j))
                .collect();
            edges.extend(index::sample(&mut r, pool.len(), n_add).into_iter().map(|k| pool[k]));
        }
    }
    Ok(g.with_edges(edges)?)
}
