//! Alternating optimization of the denoiser and the cluster network.

use crate::cluster::{
    self, assign_with_inputs, ClusterAssignment, ClusterError, ClusterNet, ClusterNetParams, ClusterTrainConfig, CutRelaxation,
    NcutOperands,
};
use crate::gvae::{self, build_masks, refine, refinement_probs, Denoiser, EdgeBatch, GvaeError, GvaeParams, Refinement};
use crate::graph::{Graph, GraphError};
use crate::layers::GraphInputs;
use crate::rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Upper end of the automatic cluster-count search.
pub const AUTO_K_MAX: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Gvae(#[from] GvaeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Cluster count: fixed, or chosen by [`select_k`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Fixed(usize),
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub dropout: f64,
    pub varphi: f64,
    pub kl_weight: f64,
    /// Refinement budget; `None` means `2·⌊0.1·|E|⌋`.
    pub budget: Option<usize>,
    pub k: KChoice,
    pub seed: u64,
    pub latent_dim: usize,
    pub hidden: usize,
    /// Early stop after this many epochs without an improvement of `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
    pub denoiser_steps: usize,
    pub cluster_steps: usize,
    /// Cluster-net epochs per candidate during automatic K selection.
    pub select_epochs: usize,
    pub relaxation: CutRelaxation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            lr_decay: 0.99,
            dropout: 0.3,
            varphi: 0.01,
            kl_weight: 1.0,
            budget: None,
            k: KChoice::Auto,
            seed: 0,
            latent_dim: gvae::LATENT,
            hidden: gvae::HIDDEN,
            patience: 20,
            min_delta: 1e-4,
            denoiser_steps: 1,
            cluster_steps: 1,
            select_epochs: 100,
            relaxation: CutRelaxation::Expected,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Invalid(m.to_owned()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr decay must lie in (0, 1]");
        }
        if !(self.varphi >= 0.0 && self.kl_weight >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.budget.is_some_and(|b| b % 2 != 0) {
            return bad("budget must be even");
        }
        if self.k == KChoice::Fixed(0) {
            return bad("k must be at least 1");
        }
        if self.latent_dim == 0 || self.hidden == 0 {
            return bad("latent and hidden widths must be positive");
        }
        Ok(())
    }

    fn cluster_config(&self, seed: u64) -> ClusterTrainConfig {
        ClusterTrainConfig {
            epochs: self.select_epochs,
            lr: self.lr,
            lr_decay: self.lr_decay,
            dropout: self.dropout,
            varphi: self.varphi,
            hidden: self.hidden,
            relaxation: self.relaxation,
            seed,
        }
    }
}

/// `2·⌊0.1·m⌋`: as many additions and deletions as 10% noise of each kind.
pub fn default_budget(num_edges: usize) -> usize {
    2 * (num_edges / 10)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_u: f64,
    pub l_prior: f64,
    pub l_recon: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub k: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    /// CSV log with header `epoch,l_u,l_prior,l_recon,l_total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_u,l_prior,l_recon,l_total\n");
        for r in &self.epochs {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.l_u, r.l_prior, r.l_recon, r.l_total
            )
            .expect("writing to a String");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub gvae: GvaeParams,
    pub cluster: ClusterNetParams,
    pub assignment: ClusterAssignment,
    pub report: TrainReport,
}

fn diverged(epoch: usize) -> impl Fn(String) -> TrainError {
    move |reason| TrainError::Diverged { epoch, reason }
}

/// The configured K, or the automatic choice over `[2, min(n, AUTO_K_MAX)]`.
pub fn resolve_k(g: &Graph, config: &TrainConfig) -> Result<usize, TrainError> {
    Ok(match config.k {
        KChoice::Fixed(k) => k,
        KChoice::Auto if g.n() < 2 => 1,
        KChoice::Auto => select_k(g, 2, g.n().min(AUTO_K_MAX), config)?.k,
    })
}

/// Alternates one denoiser step, one refinement draw and one cluster-net step
/// on the mean cut loss of the input and the refined graph, per epoch.
pub fn train(g: &Graph, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let k = resolve_k(g, config)?;
    let seed = config.seed;
    let inputs = GraphInputs::new(g);
    let ops = NcutOperands::of(g);
    let width = inputs.features.ncols();
    let budget = config.budget.unwrap_or_else(|| default_budget(g.num_edges()));

    let mut cnet = ClusterNet::new(
        ClusterNetParams::init(width, config.hidden, k, rng::split(seed, 1))?,
        &config.cluster_config(rng::split(seed, 3)),
    );
    let mut den = Denoiser::new(
        GvaeParams::init(width, config.hidden, config.latent_dim, rng::split(seed, 2)),
        config.lr,
        config.lr_decay,
        config.dropout,
        config.kl_weight,
        rng::split(seed, 4),
    );

    let mut records = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 0..config.epochs {
        let fail = diverged(epoch);
        let labels = assign_with_inputs(&inputs, &cnet.params)?.labels();
        let masks = build_masks(g, &labels)?;
        let batch = EdgeBatch::new(g, &labels);
        for _ in 0..config.denoiser_steps {
            den.step(&inputs, &batch).map_err(|e| fail(e.to_string()))?;
        }
        let probs = refinement_probs(&inputs, &den.params, &masks)?;
        let refined = refine(g, &probs, &masks, budget, rng::split(seed, 1_000_000 + epoch as u64))?;
        let hat_inputs = GraphInputs::with_features(&refined.graph, inputs.features.clone());
        let hat_ops = NcutOperands::of(&refined.graph);
        let pair = [(&inputs, &ops), (&hat_inputs, &hat_ops)];
        for _ in 0..config.cluster_steps {
            cnet.step(&pair).map_err(|e| fail(e.to_string()))?;
        }
        den.end_epoch();
        cnet.end_epoch();

        // Recorded losses are evaluation-mode values at the end of the epoch.
        let l_u = cnet.evaluate(&pair)?;
        let loss = den.evaluate(&inputs, &batch)?;
        let l_total = l_u + loss.total;
        if !l_total.is_finite() {
            return Err(fail("non-finite total loss".into()));
        }
        records.push(EpochRecord {
            epoch,
            l_u,
            l_prior: loss.prior,
            l_recon: loss.recon,
            l_total,
        });
        if best - l_total > config.min_delta {
            best = l_total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let assignment = assign_with_inputs(&inputs, &cnet.params)?;
    Ok(TrainOutcome {
        gvae: den.params,
        cluster: cnet.params,
        assignment,
        report: TrainReport {
            epochs: records,
            k,
            stopped_early,
        },
    })
}

#[derive(Debug, Clone)]
pub struct Denoised {
    pub refinement: Refinement,
    pub outcome: TrainOutcome,
    pub budget: usize,
}

/// Trains on `g` and draws the final refined graph from the trained model.
pub fn denoise(g: &Graph, config: &TrainConfig) -> Result<Denoised, TrainError> {
    let outcome = train(g, config)?;
    let budget = config.budget.unwrap_or_else(|| default_budget(g.num_edges()));
    let refinement = refine_with(g, &outcome, budget, rng::split(config.seed, u64::MAX))?;
    Ok(Denoised {
        refinement,
        outcome,
        budget,
    })
}

/// One refinement draw from trained parameters.
pub fn refine_with(g: &Graph, outcome: &TrainOutcome, budget: usize, seed: u64) -> Result<Refinement, TrainError> {
    let inputs = GraphInputs::new(g);
    let masks = build_masks(g, &outcome.assignment.labels())?;
    let probs = refinement_probs(&inputs, &outcome.gvae, &masks)?;
    Ok(refine(g, &probs, &masks, budget, seed)?)
}

/// Result of the cluster-count search.
#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub k: usize,
    /// `(k, score)` per candidate, lower is better.
    pub scores: Vec<(usize, f64)>,
}

/// Log-likelihood of `g` under a block model whose blocks are the clusters of
/// `labels`, with each block-pair density at its maximum-likelihood value.
/// Returns the log-likelihood and the number of block-pair densities.
pub fn block_model_fit(g: &Graph, labels: &[usize]) -> (f64, usize) {
    let mut size: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *size.entry(l).or_default() += 1;
    }
    let mut edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(i, j) in g.edges() {
        let (a, b) = (labels[i].min(labels[j]), labels[i].max(labels[j]));
        *edges.entry((a, b)).or_default() += 1;
    }
    let blocks: Vec<(usize, usize)> = size.iter().map(|(&l, &s)| (l, s)).collect();
    let mut ll = 0.0;
    let mut params = 0;
    for (x, &(a, na)) in blocks.iter().enumerate() {
        for &(b, nb) in &blocks[x..] {
            let pairs = if a == b { na * (na - 1) / 2 } else { na * nb };
            params += 1;
            let e = edges.get(&(a, b)).copied().unwrap_or(0);
            if pairs == 0 || e == 0 || e == pairs {
                continue;
            }
            let p = e as f64 / pairs as f64;
            ll += e as f64 * p.ln() + (pairs - e) as f64 * (1.0 - p).ln();
        }
    }
    (ll, params)
}

/// Picks K in `[k_min, k_max]` by a Bayesian information criterion. For each
/// candidate a cluster network is trained briefly; its hard assignment is
/// scored as `−2·ln L + P·ln(#pairs)` under a block model with `P` block-pair
/// densities. Ties go to the smaller K. Graphs without edges return `k_min`.
pub fn select_k(g: &Graph, k_min: usize, k_max: usize, config: &TrainConfig) -> Result<KSelection, TrainError> {
    if k_min == 0 || k_min > k_max || k_max > g.n().max(1) {
        return Err(TrainError::Invalid(format!(
            "k range [{k_min}, {k_max}] invalid for {} nodes",
            g.n()
        )));
    }
    if g.num_edges() == 0 || k_min == k_max {
        return Ok(KSelection {
            k: k_min,
            scores: Vec::new(),
        });
    }
    let n = g.n() as f64;
    let log_pairs = (n * (n - 1.0) / 2.0).ln();
    let mut scores = Vec::new();
    for k in k_min..=k_max {
        let labels = if k == 1 {
            vec![0; g.n()]
        } else {
            let cfg = config.cluster_config(rng::split(config.seed, 500 + k as u64));
            let (params, _) = cluster::train_cluster_net(std::slice::from_ref(g), k, &cfg)?;
            cluster::assign_clusters(g, &params)?.labels()
        };
        let (ll, p) = block_model_fit(g, &labels);
        scores.push((k, -2.0 * ll + p as f64 * log_pairs));
    }
    let k = scores
        .iter()
        .fold((k_min, f64::INFINITY), |best, &(k, s)| if s < best.1 { (k, s) } else { best })
        .0;
    Ok(KSelection { k, scores })
}

/// `Σ_{i<j} |A_ij − Â_ij| + omega · Tr(Xᵀ L̂ X)`.
pub fn eval_objective(g: &Graph, g_hat: &Graph, omega: f64) -> Result<f64, GraphError> {
    let fidelity = g.edge_difference(g_hat)? as f64;
    let x = g.features();
    let smoothness: f64 = g_hat
        .edges()
        .iter()
        .map(|&(i, j)| {
            let d = &x.row(i) - &x.row(j);
            d.dot(&d)
        })
        .sum();
    Ok(fidelity + omega * smoothness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_triangles() -> Graph {
        Graph::unattributed(6, vec![(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]).unwrap()
    }

    fn bridged() -> Graph {
        Graph::unattributed(6, vec![(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)]).unwrap()
    }

    #[test]
    fn bridge_is_removed() {
        let g = bridged();
        let removed = (0..20)
            .filter(|&seed| {
                let config = TrainConfig {
                    k: KChoice::Fixed(2),
                    budget: Some(2),
                    seed,
                    ..Default::default()
                };
                !denoise(&g, &config).unwrap().refinement.graph.has_edge(2, 3)
            })
            .count();
        assert!(removed >= 18, "bridge removed in {removed}/20 seeds");
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let g = bridged();
        let config = TrainConfig {
            epochs: 0,
            k: KChoice::Fixed(2),
            ..Default::default()
        };
        let out = train(&g, &config).unwrap();
        assert!(out.report.epochs.is_empty());
        assert_eq!(out.report.to_csv(), "epoch,l_u,l_prior,l_recon,l_total\n");
        assert_eq!(out.cluster, ClusterNetParams::init(6, config.hidden, 2, rng::split(0, 1)).unwrap());
    }

    #[test]
    fn same_seed_same_report() {
        let g = bridged();
        let config = TrainConfig {
            epochs: 30,
            k: KChoice::Fixed(2),
            budget: Some(2),
            seed: 3,
            ..Default::default()
        };
        let a = train(&g, &config).unwrap();
        let b = train(&g, &config).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.to_csv(), b.report.to_csv());
        assert_eq!(a.gvae, b.gvae);
    }

    #[test]
    fn cluster_loss_running_mean_does_not_rise() {
        let g = two_triangles();
        let config = TrainConfig {
            k: KChoice::Fixed(2),
            budget: Some(0),
            patience: usize::MAX,
            seed: 1,
            ..Default::default()
        };
        let report = train(&g, &config).unwrap().report;
        assert!(report.epochs.iter().all(|r| r.l_total.is_finite()));
        let l_u: Vec<f64> = report.epochs.iter().map(|r| r.l_u).collect();
        for w in crate::cluster::running_mean(&l_u).windows(2) {
            assert!(w[1] <= w[0] + 1e-3);
        }
    }

    #[test]
    fn selects_two_for_two_triangles() {
        let g = two_triangles();
        let sel = select_k(&g, 1, 4, &TrainConfig::default()).unwrap();
        assert_eq!(sel.k, 2, "{:?}", sel.scores);
        assert_eq!(select_k(&g, 3, 3, &TrainConfig::default()).unwrap().k, 3);
        let empty = Graph::unattributed(5, vec![]).unwrap();
        assert_eq!(select_k(&empty, 2, 4, &TrainConfig::default()).unwrap().k, 2);
        assert!(select_k(&g, 0, 2, &TrainConfig::default()).is_err());
        assert!(select_k(&g, 2, 7, &TrainConfig::default()).is_err());
    }

    #[test]
    fn block_model_scores_by_hand() {
        // One block, 6 edges over 15 pairs.
        let (ll, p) = block_model_fit(&two_triangles(), &[0; 6]);
        let expect = 6.0 * 0.4f64.ln() + 9.0 * 0.6f64.ln();
        assert!((ll - expect).abs() < 1e-12);
        assert_eq!(p, 1);
        let (ll, p) = block_model_fit(&two_triangles(), &[0, 0, 0, 1, 1, 1]);
        assert_eq!((ll, p), (0.0, 3));
    }

    #[test]
    fn objective_reference_values() {
        let path = Graph::new(3, vec![(0, 1), (1, 2)], array![[0.0], [1.0], [2.0]]).unwrap();
        assert_eq!(eval_objective(&path, &path, 1.0).unwrap(), 2.0);
        let other = path.with_edges(vec![(0, 2)]).unwrap();
        assert_eq!(eval_objective(&path, &other, 0.0).unwrap(), 3.0);
        assert_eq!(eval_objective(&path, &other, 1.0).unwrap(), 3.0 + 4.0);
        let wrong = Graph::unattributed(4, vec![]).unwrap();
        assert!(eval_objective(&path, &wrong, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..ok.clone() },
            TrainConfig { dropout: 1.0, ..ok.clone() },
            TrainConfig { budget: Some(3), ..ok.clone() },
            TrainConfig { k: KChoice::Fixed(0), ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Invalid(_))));
        }
        assert_eq!(default_budget(25), 4);
        assert_eq!(default_budget(9), 0);
    }
}
