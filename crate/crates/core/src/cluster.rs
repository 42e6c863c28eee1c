//! Cluster-mask network: two graph convolutions, a two-layer perceptron and a
//! row softmax, trained with the normalized-cut loss.

use crate::autodiff::{Adam, DiffError, Tape, Var};
use crate::graph::{Csr, Graph, LaplacianPair};
use crate::layers::{dropout, gcn, glorot, GraphInputs};
use crate::rng::{self, Rng};
use ndarray::Array2;
use std::sync::Arc;
use thiserror::Error;

/// Hidden width of both graph convolutions and the perceptron.
pub const HIDDEN: usize = 32;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cluster count must be at least 1")]
    ZeroK,
    #[error("feature width {got} does not match network input width {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("no graphs to train on")]
    NoGraphs,
    #[error("non-finite cluster loss at step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNetParams {
    pub gnn_w1: Array2<f64>,
    pub gnn_w2: Array2<f64>,
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array2<f64>,
    pub mlp_w2: Array2<f64>,
    pub mlp_b2: Array2<f64>,
}

impl ClusterNetParams {
    pub const NAMES: [&'static str; 6] = ["gnn_w1", "gnn_w2", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"];

    /// Glorot-initialized weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, k: usize, seed: u64) -> Result<Self, ClusterError> {
        if k == 0 {
            return Err(ClusterError::ZeroK);
        }
        let mut r = rng::rng(seed);
        Ok(Self {
            gnn_w1: glorot(input_dim, hidden, &mut r),
            gnn_w2: glorot(hidden, hidden, &mut r),
            mlp_w1: glorot(hidden, hidden, &mut r),
            mlp_b1: Array2::zeros((1, hidden)),
            mlp_w2: glorot(hidden, k, &mut r),
            mlp_b2: Array2::zeros((1, k)),
        })
    }

    pub fn zeros(input_dim: usize, hidden: usize, k: usize) -> Self {
        Self {
            gnn_w1: Array2::zeros((input_dim, hidden)),
            gnn_w2: Array2::zeros((hidden, hidden)),
            mlp_w1: Array2::zeros((hidden, hidden)),
            mlp_b1: Array2::zeros((1, hidden)),
            mlp_w2: Array2::zeros((hidden, k)),
            mlp_b2: Array2::zeros((1, k)),
        }
    }

    pub fn k(&self) -> usize {
        self.mlp_w2.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.gnn_w1.nrows()
    }

    pub fn tensors(&self) -> [&Array2<f64>; 6] {
        [&self.gnn_w1, &self.gnn_w2, &self.mlp_w1, &self.mlp_b1, &self.mlp_w2, &self.mlp_b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 6] {
        [
            &mut self.gnn_w1,
            &mut self.gnn_w2,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]
    }

    /// Rebuilds parameters from tensors in [`Self::NAMES`] order.
    pub fn from_tensors(t: Vec<Array2<f64>>) -> Option<Self> {
        let [gnn_w1, gnn_w2, mlp_w1, mlp_b1, mlp_w2, mlp_b2]: [Array2<f64>; 6] = t.try_into().ok()?;
        let h = gnn_w1.ncols();
        let k = mlp_w2.ncols();
        let ok = gnn_w2.dim() == (h, h)
            && mlp_w1.dim() == (h, h)
            && mlp_b1.dim() == (1, h)
            && mlp_w2.nrows() == h
            && mlp_b2.dim() == (1, k)
            && k > 0;
        ok.then_some(Self {
            gnn_w1,
            gnn_w2,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Soft and hard cluster assignment of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub soft: Array2<f64>,
    pub hard: Array2<f64>,
    pub k: usize,
}

impl ClusterAssignment {
    /// Hard assignment by row argmax, ties to the lowest index.
    pub fn from_soft(soft: Array2<f64>) -> Self {
        let k = soft.ncols();
        let mut hard = Array2::zeros(soft.raw_dim());
        for (i, row) in soft.rows().into_iter().enumerate() {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if k > 0 {
                hard[[i, best]] = 1.0;
            }
        }
        Self { soft, hard, k }
    }

    /// Builds a hard-only assignment from cluster ids.
    pub fn from_labels(labels: &[usize], k: usize) -> Self {
        let mut hard = Array2::zeros((labels.len(), k));
        for (i, &l) in labels.iter().enumerate() {
            hard[[i, l]] = 1.0;
        }
        Self {
            soft: hard.clone(),
            hard,
            k,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.hard
            .rows()
            .into_iter()
            .map(|r| r.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect()
    }
}

/// `ReLU(Â · h_in · w)` with `Â` the self-loop-normalized adjacency.
pub fn gcn_propagate(g: &Graph, h_in: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    g.normalized_adjacency().matmul(&h_in.dot(w)).mapv(|x| x.max(0.0))
}

/// Parameter leaves of one forward pass.
pub(crate) fn leaves(tape: &mut Tape, p: &ClusterNetParams) -> Vec<Var> {
    p.tensors().iter().map(|t| tape.leaf((*t).clone())).collect()
}

/// Soft assignment on the tape. When `train` carries a rate and a generator,
/// dropout is applied to the input of each graph convolution; the perceptron
/// runs without it, since noise there pushes the softmax towards the uniform
/// assignment, which is a stationary point of the cut loss.
pub(crate) fn forward(
    tape: &mut Tape,
    inputs: &GraphInputs,
    p: &[Var],
    mut train: Option<(f64, &mut Rng)>,
) -> Result<Var, DiffError> {
    let mut x = tape.leaf(inputs.features.clone());
    if let Some((rate, r)) = train.as_mut() {
        x = dropout(tape, x, *rate, r)?;
    }
    let h = gcn(tape, &inputs.adj, x, p[0])?;
    let mut h = tape.relu(h);
    if let Some((rate, r)) = train.as_mut() {
        h = dropout(tape, h, *rate, r)?;
    }
    let h = gcn(tape, &inputs.adj, h, p[1])?;
    let m = tape.matmul(h, p[2])?;
    let m = tape.add(m, p[3])?;
    let m = tape.relu(m);
    let logits = tape.matmul(m, p[4])?;
    let logits = tape.add(logits, p[5])?;
    Ok(tape.row_softmax(logits))
}

/// Evaluation-mode cluster loss as a function of parameter leaves laid out as
/// [`ClusterNetParams::tensors`].
pub fn loss_on_tape(
    tape: &mut Tape,
    inputs: &GraphInputs,
    ops: &NcutOperands,
    p: &[Var],
    varphi: f64,
    relaxation: CutRelaxation,
) -> Result<Var, DiffError> {
    let c = forward(tape, inputs, p, None)?;
    relaxed_ncut_on_tape(tape, c, ops, varphi, relaxation)
}

fn check_width(inputs: &GraphInputs, params: &ClusterNetParams) -> Result<(), ClusterError> {
    let got = inputs.features.ncols();
    if got != params.input_dim() {
        return Err(ClusterError::FeatureDim {
            got,
            expected: params.input_dim(),
        });
    }
    Ok(())
}

/// Evaluation-mode assignment (no dropout).
pub fn assign_clusters(g: &Graph, params: &ClusterNetParams) -> Result<ClusterAssignment, ClusterError> {
    assign_with_inputs(&GraphInputs::new(g), params)
}

pub fn assign_with_inputs(inputs: &GraphInputs, params: &ClusterNetParams) -> Result<ClusterAssignment, ClusterError> {
    check_width(inputs, params)?;
    let mut tape = Tape::new();
    let p = leaves(&mut tape, params);
    let soft = forward(&mut tape, inputs, &p, None)?;
    Ok(ClusterAssignment::from_soft(tape.value(soft).clone()))
}

/// Laplacian and degree matrices of one graph in the form the loss consumes.
#[derive(Debug, Clone)]
pub struct NcutOperands {
    pub lap: Arc<Csr>,
    pub deg: Arc<Csr>,
    pub adj: Arc<Csr>,
    pub n: usize,
}

impl NcutOperands {
    pub fn new(pair: &LaplacianPair) -> Self {
        let deg = pair.degree_matrix();
        let n = pair.degree.len();
        // A = D − L
        let adj = Csr::from_triplets(
            n,
            n,
            (0..n).flat_map(|r| {
                pair.laplacian
                    .row(r)
                    .filter(move |&(c, _)| c != r)
                    .map(move |(c, v)| (r, c, -v))
                    .collect::<Vec<_>>()
            }),
        );
        Self {
            lap: Arc::new(pair.laplacian.clone()),
            deg: Arc::new(deg),
            adj: Arc::new(adj),
            n,
        }
    }

    pub fn of(g: &Graph) -> Self {
        Self::new(&g.laplacian())
    }
}

/// `(1/K)·Tr((CᵀLC) ⊘ (CᵀDC)) + varphi·‖(K/N)CᵀC − I‖²_F` on the tape.
pub fn ncut_on_tape(tape: &mut Tape, c: Var, ops: &NcutOperands, varphi: f64) -> Result<Var, DiffError> {
    let k = tape.shape(c).1;
    let ct = tape.transpose(c);
    let lc = tape.spmm(&ops.lap, c)?;
    let num = tape.matmul(ct, lc)?;
    let dc = tape.spmm(&ops.deg, c)?;
    let den = tape.matmul(ct, dc)?;
    let ratio = tape.div(num, den)?;
    let cut = tape.trace(ratio)?;
    let cut = tape.scale(cut, 1.0 / k as f64);
    let penalty = balance_penalty(tape, c, ops.n, varphi)?;
    tape.add(cut, penalty)
}

/// Normalized-cut loss of an assignment matrix.
pub fn ncut_loss(c: &Array2<f64>, lap: &LaplacianPair, varphi: f64) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let cv = tape.leaf(c.clone());
    let loss = ncut_on_tape(&mut tape, cv, &NcutOperands::new(lap), varphi)?;
    tape.scalar(loss)
}

/// How the cut term treats a soft assignment. Both agree on every hard one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutRelaxation {
    /// `Tr((CᵀLC) ⊘ (CᵀDC))`. Vanishes on any assignment with identical rows.
    Trace,
    /// Expected cut under independent rounding of each row:
    /// `Σ_k [Cᵀ A (1 − C)]_kk / [Cᵀ D 1]_k`.
    Expected,
}

/// Expected normalized cut plus the same balance penalty as [`ncut_on_tape`].
pub fn expected_ncut_on_tape(tape: &mut Tape, c: Var, ops: &NcutOperands, varphi: f64) -> Result<Var, DiffError> {
    let (n, k) = tape.shape(c);
    let ones = tape.leaf(Array2::ones((1, n)));
    let neg = tape.scale(c, -1.0);
    let outside = tape.offset(neg, 1.0);
    let reach = tape.spmm(&ops.adj, outside)?;
    let leaving = tape.mul(c, reach)?;
    let cut = tape.matmul(ones, leaving)?;
    let dc = tape.spmm(&ops.deg, c)?;
    let vol = tape.matmul(ones, dc)?;
    let ratio = tape.div(cut, vol)?;
    let total = tape.sum(ratio);
    let cut = tape.scale(total, 1.0 / k as f64);
    let penalty = balance_penalty(tape, c, n, varphi)?;
    tape.add(cut, penalty)
}

fn balance_penalty(tape: &mut Tape, c: Var, n: usize, varphi: f64) -> Result<Var, DiffError> {
    let k = tape.shape(c).1;
    let ct = tape.transpose(c);
    let ctc = tape.matmul(ct, c)?;
    let balance = tape.scale(ctc, k as f64 / n.max(1) as f64);
    let eye = tape.leaf(Array2::eye(k));
    let gap = tape.sub(balance, eye)?;
    let penalty = tape.frob_sq(gap);
    Ok(tape.scale(penalty, varphi))
}

/// Cut loss of `c` under the chosen relaxation.
pub fn relaxed_ncut_on_tape(
    tape: &mut Tape,
    c: Var,
    ops: &NcutOperands,
    varphi: f64,
    relaxation: CutRelaxation,
) -> Result<Var, DiffError> {
    match relaxation {
        CutRelaxation::Trace => ncut_on_tape(tape, c, ops, varphi),
        CutRelaxation::Expected => expected_ncut_on_tape(tape, c, ops, varphi),
    }
}

/// [`ncut_loss`] with the expected-cut relaxation.
pub fn expected_ncut_loss(c: &Array2<f64>, lap: &LaplacianPair, varphi: f64) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let cv = tape.leaf(c.clone());
    let loss = expected_ncut_on_tape(&mut tape, cv, &NcutOperands::new(lap), varphi)?;
    tape.scalar(loss)
}

/// Optimizer state of a cluster network under training.
#[derive(Debug, Clone)]
pub struct ClusterNet {
    pub params: ClusterNetParams,
    opt: Adam,
    rng: Rng,
    dropout: f64,
    varphi: f64,
    relaxation: CutRelaxation,
    steps: usize,
}

impl ClusterNet {
    pub fn new(params: ClusterNetParams, config: &ClusterTrainConfig) -> Self {
        Self {
            params,
            opt: Adam::new(config.lr, config.lr_decay),
            rng: rng::rng(config.seed),
            dropout: config.dropout,
            varphi: config.varphi,
            relaxation: config.relaxation,
            steps: 0,
        }
    }

    /// One Adam update on the mean loss over `batch`. Returns that mean.
    pub fn step(&mut self, batch: &[(&GraphInputs, &NcutOperands)]) -> Result<f64, ClusterError> {
        if batch.is_empty() {
            return Err(ClusterError::NoGraphs);
        }
        for (inputs, _) in batch {
            check_width(inputs, &self.params)?;
        }
        let mut tape = Tape::new();
        let p = leaves(&mut tape, &self.params);
        let mut total: Option<Var> = None;
        for (inputs, ops) in batch {
            let c = forward(&mut tape, inputs, &p, Some((self.dropout, &mut self.rng)))?;
            let l = relaxed_ncut_on_tape(&mut tape, c, ops, self.varphi, self.relaxation)?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        let mean = tape.scale(total.expect("batch is non-empty"), 1.0 / batch.len() as f64);
        let value = tape.scalar(mean)?;
        self.steps += 1;
        if !value.is_finite() {
            return Err(ClusterError::Diverged(self.steps));
        }
        let grads = tape.backward(mean)?;
        let g: Vec<Array2<f64>> = p.iter().map(|&v| grads.wrt(v)).collect();
        let mut tensors = self.params.tensors_mut();
        self.opt
            .step(&mut tensors, &g)
            .map_err(|_| ClusterError::Diverged(self.steps))?;
        Ok(value)
    }

    /// Mean loss over `batch` at the current parameters, without dropout.
    pub fn evaluate(&self, batch: &[(&GraphInputs, &NcutOperands)]) -> Result<f64, ClusterError> {
        if batch.is_empty() {
            return Err(ClusterError::NoGraphs);
        }
        let mut tape = Tape::new();
        let p = leaves(&mut tape, &self.params);
        let mut total = 0.0;
        for (inputs, ops) in batch {
            check_width(inputs, &self.params)?;
            let c = forward(&mut tape, inputs, &p, None)?;
            let l = relaxed_ncut_on_tape(&mut tape, c, ops, self.varphi, self.relaxation)?;
            total += tape.scalar(l)?;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn end_epoch(&mut self) {
        self.opt.end_epoch();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub dropout: f64,
    pub varphi: f64,
    pub hidden: usize,
    pub relaxation: CutRelaxation,
    pub seed: u64,
}

impl Default for ClusterTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            lr_decay: 0.99,
            dropout: 0.3,
            varphi: 0.01,
            hidden: HIDDEN,
            relaxation: CutRelaxation::Expected,
            seed: 0,
        }
    }
}

/// Trains a fresh network on the mean loss over `graphs`. Returns the final
/// parameters and the loss after each epoch, measured without dropout.
pub fn train_cluster_net(
    graphs: &[Graph],
    k: usize,
    config: &ClusterTrainConfig,
) -> Result<(ClusterNetParams, Vec<f64>), ClusterError> {
    let first = graphs.first().ok_or(ClusterError::NoGraphs)?;
    let inputs: Vec<GraphInputs> = graphs.iter().map(GraphInputs::new).collect();
    let ops: Vec<NcutOperands> = graphs.iter().map(NcutOperands::of).collect();
    let params = ClusterNetParams::init(
        crate::layers::node_features(first).ncols(),
        config.hidden,
        k,
        rng::split(config.seed, 0),
    )?;
    let mut net = ClusterNet::new(
        params,
        &ClusterTrainConfig {
            seed: rng::split(config.seed, 1),
            ..config.clone()
        },
    );
    let batch: Vec<(&GraphInputs, &NcutOperands)> = inputs.iter().zip(&ops).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        net.step(&batch)?;
        net.end_epoch();
        history.push(net.evaluate(&batch)?);
    }
    Ok((net.params, history))
}

/// Cumulative mean of `xs` after each element.
#[cfg(test)]
pub(crate) fn running_mean(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan((0.0, 0usize), |(sum, n), &x| {
            *sum += x;
            *n += 1;
            Some(*sum / *n as f64)
        })
        .collect()
}
