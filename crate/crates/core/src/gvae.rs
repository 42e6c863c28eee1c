//! Variational graph autoencoder with a cluster-masked edge decoder.

use crate::autodiff::{Adam, DiffError, Tape, Var, GUARD};
use crate::graph::Graph;
use crate::layers::{dropout, gcn, glorot, GraphInputs};
use crate::rng::{self, Rng};
use ndarray::{concatenate, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

pub const LATENT: usize = 16;
pub const HIDDEN: usize = 32;
pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 1e3;

#[derive(Debug, Error)]
pub enum GvaeError {
    #[error("feature width {got} does not match encoder input width {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("no probability for observed edge ({0}, {1})")]
    Coverage(usize, usize),
    #[error("labels cover {got} nodes, graph has {expected}")]
    NodeCount { got: usize, expected: usize },
    #[error("non-finite denoiser loss at step {0}")]
    Diverged(usize),
    #[error("refinement budget must be even, got {0}")]
    OddBudget(usize),
    #[error("weighted sampling failed: {0}")]
    Sampling(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GvaeParams {
    pub enc_w1: Array2<f64>,
    pub enc_mu: Array2<f64>,
    pub enc_logsigma: Array2<f64>,
    pub w_a2: Array2<f64>,
    pub w_a1: Array2<f64>,
}

impl GvaeParams {
    pub const NAMES: [&'static str; 5] = ["enc_w1", "enc_mu", "enc_logsigma", "w_a2", "w_a1"];

    pub fn init(input_dim: usize, hidden: usize, latent: usize, seed: u64) -> Self {
        let mut r = rng::rng(seed);
        Self {
            enc_w1: glorot(input_dim, hidden, &mut r),
            enc_mu: glorot(hidden, latent, &mut r),
            enc_logsigma: glorot(hidden, latent, &mut r),
            w_a2: glorot(latent + input_dim, hidden, &mut r),
            w_a1: glorot(hidden, 1, &mut r),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize, latent: usize) -> Self {
        Self {
            enc_w1: Array2::zeros((input_dim, hidden)),
            enc_mu: Array2::zeros((hidden, latent)),
            enc_logsigma: Array2::zeros((hidden, latent)),
            w_a2: Array2::zeros((latent + input_dim, hidden)),
            w_a1: Array2::zeros((hidden, 1)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc_w1.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_mu.ncols()
    }

    pub fn tensors(&self) -> [&Array2<f64>; 5] {
        [&self.enc_w1, &self.enc_mu, &self.enc_logsigma, &self.w_a2, &self.w_a1]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 5] {
        [
            &mut self.enc_w1,
            &mut self.enc_mu,
            &mut self.enc_logsigma,
            &mut self.w_a2,
            &mut self.w_a1,
        ]
    }

    /// Rebuilds parameters from tensors in [`Self::NAMES`] order.
    pub fn from_tensors(t: Vec<Array2<f64>>) -> Option<Self> {
        let [enc_w1, enc_mu, enc_logsigma, w_a2, w_a1]: [Array2<f64>; 5] = t.try_into().ok()?;
        let (d, h) = enc_w1.dim();
        let z = enc_mu.ncols();
        let hd = w_a1.nrows();
        let ok = enc_mu.nrows() == h
            && enc_logsigma.dim() == (h, z)
            && w_a2.dim() == (z + d, hd)
            && w_a1.ncols() == 1;
        ok.then_some(Self {
            enc_w1,
            enc_mu,
            enc_logsigma,
            w_a2,
            w_a1,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Posterior means and standard deviations, plus an optional sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
    pub z_sample: Option<Array2<f64>>,
}

fn leaves(tape: &mut Tape, p: &GvaeParams) -> Vec<Var> {
    p.tensors().iter().map(|t| tape.leaf((*t).clone())).collect()
}

/// Encoder on the tape: returns `(μ, log σ)` with `log σ` clamped so that
/// `σ ∈ [SIGMA_MIN, SIGMA_MAX]`.
fn encode_on_tape(
    tape: &mut Tape,
    inputs: &GraphInputs,
    p: &[Var],
    mut train: Option<(f64, &mut Rng)>,
) -> Result<(Var, Var), DiffError> {
    let mut x = tape.leaf(inputs.features.clone());
    if let Some((rate, r)) = train.as_mut() {
        x = dropout(tape, x, *rate, r)?;
    }
    let h = gcn(tape, &inputs.adj, x, p[0])?;
    let mut h = tape.relu(h);
    if let Some((rate, r)) = train.as_mut() {
        h = dropout(tape, h, *rate, r)?;
    }
    let mu = gcn(tape, &inputs.adj, h, p[1])?;
    let log_sigma = gcn(tape, &inputs.adj, h, p[2])?;
    let log_sigma = tape.clamp(log_sigma, SIGMA_MIN.ln(), SIGMA_MAX.ln());
    Ok((mu, log_sigma))
}

fn check_width(inputs: &GraphInputs, params: &GvaeParams) -> Result<(), GvaeError> {
    let got = inputs.features.ncols();
    if got != params.input_dim() {
        return Err(GvaeError::FeatureDim {
            got,
            expected: params.input_dim(),
        });
    }
    Ok(())
}

pub fn encode(g: &Graph, params: &GvaeParams) -> Result<LatentState, GvaeError> {
    encode_with_inputs(&GraphInputs::new(g), params)
}

pub fn encode_with_inputs(inputs: &GraphInputs, params: &GvaeParams) -> Result<LatentState, GvaeError> {
    check_width(inputs, params)?;
    let mut tape = Tape::new();
    let p = leaves(&mut tape, params);
    let (mu, log_sigma) = encode_on_tape(&mut tape, inputs, &p, None)?;
    Ok(LatentState {
        mu: tape.value(mu).clone(),
        sigma: tape.value(log_sigma).mapv(f64::exp),
        z_sample: None,
    })
}

/// Standard normal matrix.
fn normal(shape: (usize, usize), r: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| StandardNormal.sample(r))
}

/// `z = μ + σ ⊙ η` with `η ~ N(0, I)` drawn from `seed`.
pub fn reparameterize(state: &LatentState, seed: u64) -> Array2<f64> {
    let eta = normal(state.mu.dim(), &mut rng::rng(seed));
    &state.mu + &(&state.sigma * &eta)
}

/// Edge probabilities for `pairs` given latent rows `z` and features `x`.
pub fn decode_pairs(z: &Array2<f64>, x: &Array2<f64>, pairs: &[(usize, usize)], params: &GvaeParams) -> Vec<f64> {
    if pairs.is_empty() {
        return Vec::new();
    }
    let e = concatenate(Axis(1), &[z.view(), x.view()]).expect("row counts agree");
    let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let prod = e.select(Axis(0), &left) * e.select(Axis(0), &right);
    let hidden = prod.dot(&params.w_a2).mapv(|v| v.max(0.0));
    hidden.dot(&params.w_a1).iter().map(|&v| sigmoid(v)).collect()
}

/// `sigmoid(W_a1 · ReLU(W_a2 · ([Z_i|X_i] ⊙ [Z_j|X_j])))`.
pub fn decode_edge(z: &Array2<f64>, x: &Array2<f64>, i: usize, j: usize, params: &GvaeParams) -> f64 {
    decode_pairs(z, x, &[(i, j)], params)[0]
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Which node pairs a [`ProbabilisticGraph`] was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    ObservedEdges,
    EdgesAndIntraNonEdges,
}

/// Decoder output on a set of unordered pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticGraph {
    pub probs: BTreeMap<(usize, usize), f64>,
    pub coverage: Coverage,
}

impl ProbabilisticGraph {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.probs.get(&(i.min(j), i.max(j))).copied()
    }

    /// Diagnostic dump: `i j p` per covered pair, six decimals.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (&(i, j), p) in &self.probs {
            writeln!(out, "{i} {j} {p:.6}").expect("writing to a String");
        }
        out
    }
}

/// Edge and candidate sets induced by a hard cluster assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrices {
    /// Edges inside a cluster.
    pub s: Vec<(usize, usize)>,
    /// Edges between clusters.
    pub inter: Vec<(usize, usize)>,
    /// Same-cluster pairs that are not edges.
    pub intra_nonedge: Vec<(usize, usize)>,
}

pub fn build_masks(g: &Graph, labels: &[usize]) -> Result<MaskMatrices, GvaeError> {
    if labels.len() != g.n() {
        return Err(GvaeError::NodeCount {
            got: labels.len(),
            expected: g.n(),
        });
    }
    let (s, inter) = g.edges().iter().partition(|&&(i, j)| labels[i] == labels[j]);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (node, &c) in labels.iter().enumerate() {
        groups.entry(c).or_default().push(node);
    }
    let edges = g.edge_set();
    let mut intra_nonedge: Vec<(usize, usize)> = groups
        .values()
        .flat_map(|members| {
            members
                .iter()
                .enumerate()
                .flat_map(move |(a, &i)| members[a + 1..].iter().map(move |&j| (i, j)))
        })
        .filter(|pair| !edges.contains(pair))
        .collect();
    intra_nonedge.sort_unstable();
    Ok(MaskMatrices { s, inter, intra_nonedge })
}

/// Prior and reconstruction parts of the denoiser loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GvaeLoss {
    pub prior: f64,
    pub recon: f64,
    pub total: f64,
}

/// `KL(N(μ, σ²) ‖ N(0, I))`, summed over nodes and dimensions.
pub fn kl_divergence(mu: &Array2<f64>, sigma: &Array2<f64>) -> f64 {
    mu.iter()
        .zip(sigma.iter())
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum()
}

/// Reconstruction targets of the observed edges: 1 inside a cluster, 0 across.
pub fn edge_targets(g: &Graph, labels: &[usize]) -> Vec<f64> {
    g.edges()
        .iter()
        .map(|&(i, j)| if labels[i] == labels[j] { 1.0 } else { 0.0 })
        .collect()
}

/// Denoiser loss: `kl_weight · KL + mean binary cross-entropy` over observed edges.
pub fn gvae_loss(
    g: &Graph,
    labels: &[usize],
    state: &LatentState,
    probs: &ProbabilisticGraph,
    kl_weight: f64,
) -> Result<GvaeLoss, GvaeError> {
    if labels.len() != g.n() {
        return Err(GvaeError::NodeCount {
            got: labels.len(),
            expected: g.n(),
        });
    }
    let prior = kl_divergence(&state.mu, &state.sigma);
    let mut bce = 0.0;
    for (&(i, j), t) in g.edges().iter().zip(edge_targets(g, labels)) {
        let p = probs.get(i, j).ok_or(GvaeError::Coverage(i, j))?;
        bce -= t * (p + GUARD).ln() + (1.0 - t) * (1.0 - p + GUARD).ln();
    }
    let recon = if g.num_edges() == 0 {
        0.0
    } else {
        bce / g.num_edges() as f64
    };
    Ok(GvaeLoss {
        prior,
        recon,
        total: kl_weight * prior + recon,
    })
}

/// Fixed per-graph data for the tape objective.
#[derive(Debug, Clone)]
pub struct EdgeBatch {
    left: Arc<[usize]>,
    right: Arc<[usize]>,
    targets: Array2<f64>,
}

impl EdgeBatch {
    pub fn new(g: &Graph, labels: &[usize]) -> Self {
        Self {
            left: g.edges().iter().map(|e| e.0).collect(),
            right: g.edges().iter().map(|e| e.1).collect(),
            targets: Array2::from_shape_vec((g.num_edges(), 1), edge_targets(g, labels)).expect("one target per edge"),
        }
    }
}

/// Tape nodes of one objective evaluation.
pub struct Objective {
    pub prior: Var,
    pub recon: Var,
    pub total: Var,
}

/// Builds the denoiser objective on `tape`, sampling `z = μ + σ ⊙ eta`.
pub fn objective_on_tape(
    tape: &mut Tape,
    inputs: &GraphInputs,
    batch: &EdgeBatch,
    p: &[Var],
    eta: &Array2<f64>,
    kl_weight: f64,
    train: Option<(f64, &mut Rng)>,
) -> Result<Objective, DiffError> {
    let (mu, log_sigma) = encode_on_tape(tape, inputs, p, train)?;
    // KL = ½ Σ (μ² + e^{2 log σ} − 1 − 2 log σ)
    let mu_sq = tape.mul(mu, mu)?;
    let two_ls = tape.scale(log_sigma, 2.0);
    let var = tape.exp(two_ls);
    let a = tape.add(mu_sq, var)?;
    let b = tape.sub(a, two_ls)?;
    let b = tape.offset(b, -1.0);
    let kl = tape.sum(b);
    let prior = tape.scale(kl, 0.5);

    let recon = if batch.targets.is_empty() {
        tape.scalar_leaf(0.0)
    } else {
        let sigma = tape.exp(log_sigma);
        let noise = tape.leaf(eta.clone());
        let spread = tape.mul(sigma, noise)?;
        let z = tape.add(mu, spread)?;
        let x = tape.leaf(inputs.features.clone());
        let e = tape.concat_cols(&[z, x])?;
        let ei = tape.gather_rows(e, &batch.left)?;
        let ej = tape.gather_rows(e, &batch.right)?;
        let prod = tape.mul(ei, ej)?;
        let hidden = tape.matmul(prod, p[3])?;
        let hidden = tape.relu(hidden);
        let logit = tape.matmul(hidden, p[4])?;
        let prob = tape.sigmoid(logit);
        let t = tape.leaf(batch.targets.clone());
        let one_minus_t = tape.leaf(batch.targets.mapv(|v| 1.0 - v));
        let log_p = tape.log(prob)?;
        let neg = tape.scale(prob, -1.0);
        let one_minus_p = tape.offset(neg, 1.0);
        let log_q = tape.log(one_minus_p)?;
        let pos = tape.mul(t, log_p)?;
        let negs = tape.mul(one_minus_t, log_q)?;
        let ll = tape.add(pos, negs)?;
        let mean = tape.mean(ll);
        tape.scale(mean, -1.0)
    };
    let weighted = tape.scale(prior, kl_weight);
    let total = tape.add(weighted, recon)?;
    Ok(Objective { prior, recon, total })
}

/// Optimizer state of a denoiser under training.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub params: GvaeParams,
    opt: Adam,
    rng: Rng,
    dropout: f64,
    kl_weight: f64,
    steps: usize,
}

impl Denoiser {
    pub fn new(params: GvaeParams, lr: f64, lr_decay: f64, dropout: f64, kl_weight: f64, seed: u64) -> Self {
        Self {
            params,
            opt: Adam::new(lr, lr_decay),
            rng: rng::rng(seed),
            dropout,
            kl_weight,
            steps: 0,
        }
    }

    /// One Adam update on the objective. Returns the pre-update losses.
    pub fn step(&mut self, inputs: &GraphInputs, batch: &EdgeBatch) -> Result<GvaeLoss, GvaeError> {
        check_width(inputs, &self.params)?;
        let eta = normal((inputs.features.nrows(), self.params.latent_dim()), &mut self.rng);
        let mut tape = Tape::new();
        let p = leaves(&mut tape, &self.params);
        let obj = objective_on_tape(
            &mut tape,
            inputs,
            batch,
            &p,
            &eta,
            self.kl_weight,
            Some((self.dropout, &mut self.rng)),
        )?;
        self.steps += 1;
        let loss = GvaeLoss {
            prior: tape.scalar(obj.prior)?,
            recon: tape.scalar(obj.recon)?,
            total: tape.scalar(obj.total)?,
        };
        if !loss.total.is_finite() {
            return Err(GvaeError::Diverged(self.steps));
        }
        let grads = tape.backward(obj.total)?;
        let g: Vec<Array2<f64>> = p.iter().map(|&v| grads.wrt(v)).collect();
        let mut tensors = self.params.tensors_mut();
        self.opt
            .step(&mut tensors, &g)
            .map_err(|_| GvaeError::Diverged(self.steps))?;
        Ok(loss)
    }

    /// Losses at the current parameters without dropout and with `z = μ`.
    pub fn evaluate(&self, inputs: &GraphInputs, batch: &EdgeBatch) -> Result<GvaeLoss, GvaeError> {
        check_width(inputs, &self.params)?;
        let eta = Array2::zeros((inputs.features.nrows(), self.params.latent_dim()));
        let mut tape = Tape::new();
        let p = leaves(&mut tape, &self.params);
        let obj = objective_on_tape(&mut tape, inputs, batch, &p, &eta, self.kl_weight, None)?;
        Ok(GvaeLoss {
            prior: tape.scalar(obj.prior)?,
            recon: tape.scalar(obj.recon)?,
            total: tape.scalar(obj.total)?,
        })
    }

    pub fn end_epoch(&mut self) {
        self.opt.end_epoch();
    }
}

/// Decoder probabilities at `z = μ` for every observed edge and every
/// same-cluster non-edge.
pub fn refinement_probs(
    inputs: &GraphInputs,
    params: &GvaeParams,
    masks: &MaskMatrices,
) -> Result<ProbabilisticGraph, GvaeError> {
    let state = encode_with_inputs(inputs, params)?;
    let pairs: Vec<(usize, usize)> = masks
        .s
        .iter()
        .chain(&masks.inter)
        .chain(&masks.intra_nonedge)
        .copied()
        .collect();
    let values = decode_pairs(&state.mu, &inputs.features, &pairs, params);
    Ok(ProbabilisticGraph {
        probs: pairs.into_iter().zip(values).collect(),
        coverage: Coverage::EdgesAndIntraNonEdges,
    })
}

/// Outcome of one discrete refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub graph: Graph,
    pub deleted: Vec<(usize, usize)>,
    pub added: Vec<(usize, usize)>,
    /// Edits requested per side (`budget / 2`).
    pub requested: usize,
    /// True when a pool was smaller than the request.
    pub truncated: bool,
}

fn draw(
    pool: &[(usize, usize)],
    amount: usize,
    weight: impl Fn(f64) -> f64,
    probs: &ProbabilisticGraph,
    r: &mut Rng,
) -> Result<Vec<(usize, usize)>, GvaeError> {
    let amount = amount.min(pool.len());
    if amount == 0 {
        return Ok(Vec::new());
    }
    let weights = pool
        .iter()
        .map(|&(i, j)| probs.get(i, j).map(&weight).ok_or(GvaeError::Coverage(i, j)))
        .collect::<Result<Vec<f64>, _>>()?;
    let picked = rand::seq::index::sample_weighted(r, pool.len(), |k| weights[k], amount)
        .map_err(|e| GvaeError::Sampling(e.to_string()))?;
    let mut out: Vec<(usize, usize)> = picked.into_iter().map(|k| pool[k]).collect();
    out.sort_unstable();
    Ok(out)
}

/// Spends `budget / 2` deletions on inter-cluster edges (weight `exp(1 − Ā)`)
/// and `budget / 2` additions on same-cluster non-edges (weight `exp(Ā)`),
/// sampling without replacement.
pub fn refine(
    g: &Graph,
    probs: &ProbabilisticGraph,
    masks: &MaskMatrices,
    budget: usize,
    seed: u64,
) -> Result<Refinement, GvaeError> {
    if budget % 2 != 0 {
        return Err(GvaeError::OddBudget(budget));
    }
    let half = budget / 2;
    let mut r = rng::rng(seed);
    let deleted = draw(&masks.inter, half, |p| (1.0 - p).exp(), probs, &mut r)?;
    let added = draw(&masks.intra_nonedge, half, f64::exp, probs, &mut r)?;
    let mut edges = g.edge_set();
    for e in &deleted {
        edges.remove(e);
    }
    edges.extend(added.iter().copied());
    Ok(Refinement {
        graph: g.with_edges(edges)?,
        truncated: deleted.len() < half || added.len() < half,
        deleted,
        added,
        requested: half,
    })
}
