//! Building blocks shared by the cluster network and the autoencoder.

use crate::autodiff::{DiffError, Tape, Var};
use crate::graph::{Csr, Graph};
use crate::rng::Rng;
use ndarray::Array2;
use rand::Rng as _;
use std::sync::Arc;

/// Width of the identity features given to graphs without node attributes.
pub const IDENTITY_CAP: usize = 64;

/// Node features used as network input: the stored attributes, or for
/// unattributed graphs the identity truncated to `min(n, IDENTITY_CAP)` columns.
pub fn node_features(g: &Graph) -> Array2<f64> {
    if g.feature_dim() > 0 {
        return g.features().clone();
    }
    let cols = g.n().min(IDENTITY_CAP);
    Array2::from_shape_fn((g.n(), cols), |(i, j)| if i == j { 1.0 } else { 0.0 })
}

/// Uniform Glorot initialization.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..=limit))
}

/// Inverted dropout: zeroes entries with probability `p` and rescales the rest.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut Rng) -> Result<Var, DiffError> {
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let shape = tape.shape(x);
    let mask = Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep });
    let m = tape.leaf(mask);
    tape.mul(x, m)
}

/// One graph convolution `Â · h · w`, without activation.
pub fn gcn(tape: &mut Tape, adj: &Arc<Csr>, h: Var, w: Var) -> Result<Var, DiffError> {
    let hw = tape.matmul(h, w)?;
    tape.spmm(adj, hw)
}

/// Per-graph inputs that stay fixed while parameters change.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub features: Array2<f64>,
    pub adj: Arc<Csr>,
}

impl GraphInputs {
    pub fn new(g: &Graph) -> Self {
        Self {
            features: node_features(g),
            adj: Arc::new(g.normalized_adjacency()),
        }
    }

    /// Inputs for `g` that reuse features computed for another graph on the same nodes.
    pub fn with_features(g: &Graph, features: Array2<f64>) -> Self {
        Self {
            features,
            adj: Arc::new(g.normalized_adjacency()),
        }
    }
}
