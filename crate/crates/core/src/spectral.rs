//! Laplacian spectra and Monte-Carlo checks of the edge-removal perturbation bounds.

use crate::graph::Graph;
use crate::rng;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rayon::prelude::*;
use std::fmt::Write as _;
use thiserror::Error;

pub const DENSE_LIMIT: usize = 2000;
/// Eigengaps at or below this make the Davis–Kahan bound vacuous.
pub const GAP_FLOOR: f64 = 1e-6;
/// λ₂ at or below this counts as disconnected.
pub const ZERO_EIGENVALUE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("graph has {n} nodes, above the dense limit {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Ascending eigenvalues with unit eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i).iter().copied().collect()
    }

    /// `‖Lu − λu‖₂` for the `i`-th pair.
    pub fn residual(&self, lap: &DMatrix<f64>, i: usize) -> f64 {
        let u = self.vectors.column(i);
        (lap * u - u * self.values[i]).norm()
    }
}

pub fn dense_laplacian(g: &Graph) -> DMatrix<f64> {
    let n = g.n();
    let mut l = DMatrix::zeros(n, n);
    for &(i, j) in g.edges() {
        l[(i, j)] -= 1.0;
        l[(j, i)] -= 1.0;
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
    }
    l
}

pub fn eig_laplacian(g: &Graph) -> Result<Spectrum, SpectralError> {
    eig_laplacian_limited(g, DENSE_LIMIT)
}

/// Full decomposition of `L = D − A`. Ties in eigenvalue keep solver index
/// order; each eigenvector's first nonzero coordinate is made positive.
pub fn eig_laplacian_limited(g: &Graph, limit: usize) -> Result<Spectrum, SpectralError> {
    if g.n() > limit {
        return Err(SpectralError::TooLarge { n: g.n(), limit });
    }
    Ok(eig_dense(dense_laplacian(g)))
}

fn eig_dense(lap: DMatrix<f64>) -> Spectrum {
    let n = lap.nrows();
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }
    Spectrum {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors,
    }
}

/// `β = ½·max(χ, edge exponent)`.
pub fn beta(chi: f64, edge_exponent: f64) -> f64 {
    0.5 * chi.max(edge_exponent)
}

/// `κ = λ′₂ / (q·N^β)`.
pub fn kappa(lambda2: f64, q: f64, n: usize, beta: f64) -> f64 {
    lambda2 / (q * (n as f64).powf(beta))
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    pub u2: Vec<f64>,
    pub u3: Vec<f64>,
    pub u_n: Vec<f64>,
    /// `Σ dᵢ² = N^chi`.
    pub chi: f64,
    /// `m = N^edge_exponent`.
    pub edge_exponent: f64,
    pub epsilon: f64,
    pub q: f64,
    /// `None` when λ′₂ is zero (disconnected graph).
    pub kappa: Option<f64>,
    pub beta: f64,
    pub assumption1_holds: bool,
    pub assumption2_holds: bool,
}

impl SpectralReport {
    pub fn lambda(&self, i: usize) -> f64 {
        self.eigenvalues[i - 1]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// Vacuous bound of `1/κ`, or infinity when κ is undefined.
    pub fn angle_bound(&self) -> f64 {
        self.kappa.map_or(f64::INFINITY, |k| 1.0 / k)
    }
}

fn validate(q: f64, epsilon: Option<f64>) -> Result<(), SpectralError> {
    if !(q >= 0.0 && q < 1.0) {
        return Err(SpectralError::Invalid(format!("q must lie in [0, 1), got {q}")));
    }
    if let Some(e) = epsilon {
        if !(e >= 2.0) {
            return Err(SpectralError::Invalid(format!("epsilon must be at least 2, got {e}")));
        }
    }
    Ok(())
}

/// Evaluates the sparse-cut and noise-level assumptions on a clean graph.
/// Logarithms are natural. `q = 0` gives an infinite κ on connected graphs.
pub fn check_assumption(g: &Graph, q: f64, epsilon: f64) -> Result<SpectralReport, SpectralError> {
    validate(q, Some(epsilon))?;
    let n = g.n();
    if n < 3 {
        return Err(SpectralError::Invalid(format!("need at least 3 nodes, got {n}")));
    }
    let spectrum = eig_laplacian(g)?;
    let nf = n as f64;
    let deg_sq: f64 = g.degrees().iter().map(|&d| (d * d) as f64).sum();
    let exponent = |x: f64| if x > 0.0 { x.ln() / nf.ln() } else { f64::NEG_INFINITY };
    let chi = exponent(deg_sq);
    let edge_exponent = exponent(g.num_edges() as f64);
    let b = beta(chi, edge_exponent);
    let (l2, l3, ln) = (spectrum.values[1], spectrum.values[2], spectrum.values[n - 1]);
    let kappa = (l2 > ZERO_EIGENVALUE).then(|| kappa(l2, q, n, b));
    let ratio = if epsilon.is_finite() { 2.0 * epsilon / (epsilon - 1.0) } else { 2.0 };
    let floor = (12.5 * epsilon * q * ln).max(1.5 * epsilon * nf.ln());
    Ok(SpectralReport {
        u2: spectrum.vector(1),
        u3: spectrum.vector(2),
        u_n: spectrum.vector(n - 1),
        eigenvalues: spectrum.values,
        chi,
        edge_exponent,
        epsilon,
        q,
        kappa,
        beta: b,
        assumption1_holds: ratio * l2 < l3 && l3 >= floor,
        assumption2_holds: kappa.is_some_and(|k| k > 1.0),
    })
}

/// One perturbation trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub removed: usize,
    pub sin: f64,
    pub lambda3: f64,
    /// `‖L − L′‖_F / δ`, `None` when the gap δ is below [`GAP_FLOOR`].
    pub davis_kahan: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AngleStudy {
    pub mean_sin: f64,
    pub trials: Vec<Trial>,
}

impl AngleStudy {
    pub fn sins(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.sin).collect()
    }

    pub fn std_error(&self) -> f64 {
        let n = self.trials.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let var = self.trials.iter().map(|t| (t.sin - self.mean_sin).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

fn run_trial(g: &Graph, clean: &Spectrum, q: f64, seed: u64, trial: u64) -> Trial {
    let mut r = rng::rng_for(seed, trial);
    let mut removed_degree = vec![0usize; g.n()];
    let mut removed = 0;
    let kept: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|&(i, j)| {
            let drop = q > 0.0 && r.random::<f64>() < q;
            if drop {
                removed += 1;
                removed_degree[i] += 1;
                removed_degree[j] += 1;
            }
            !drop
        })
        .collect();
    if removed == 0 {
        return Trial {
            removed,
            sin: 0.0,
            lambda3: clean.values[2],
            davis_kahan: Some(0.0),
        };
    }
    let perturbed = g.with_edges(kept).expect("subgraph of a valid graph");
    let spectrum = eig_dense(dense_laplacian(&perturbed));
    let u2 = clean.vectors.column(1);
    let v2 = spectrum.vectors.column(1);
    let cos = u2.dot(&v2).abs().min(1.0);
    let sin = (1.0 - cos * cos).max(0.0).sqrt();

    let frob = (2.0 * removed as f64 + removed_degree.iter().map(|&d| (d * d) as f64).sum::<f64>()).sqrt();
    let target = clean.values[1];
    let gap = spectrum
        .values
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != 1)
        .map(|(_, &l)| (l - target).abs())
        .fold(f64::INFINITY, f64::min);
    Trial {
        removed,
        sin,
        lambda3: spectrum.values[2],
        davis_kahan: (gap > GAP_FLOOR).then(|| frob / gap),
    }
}

fn trials(g: &Graph, q: f64, count: usize, seed: u64) -> Result<(Spectrum, Vec<Trial>), SpectralError> {
    validate(q, None)?;
    if count == 0 {
        return Err(SpectralError::Invalid("trials must be at least 1".into()));
    }
    if g.n() < 3 {
        return Err(SpectralError::Invalid(format!("need at least 3 nodes, got {}", g.n())));
    }
    let clean = eig_laplacian(g)?;
    let out = (0..count as u64)
        .into_par_iter()
        .map(|t| run_trial(g, &clean, q, seed, t))
        .collect();
    Ok((clean, out))
}

/// Removes each edge with probability `q` per trial and measures the angle
/// between the clean and perturbed Fiedler vectors. Trial `t` draws from
/// sub-seed `(seed, t)`, so results do not depend on the thread count.
pub fn perturb_and_angle(g: &Graph, q: f64, count: usize, seed: u64) -> Result<AngleStudy, SpectralError> {
    let (_, trials) = trials(g, q, count, seed)?;
    let mean_sin = trials.iter().map(|t| t.sin).sum::<f64>() / count as f64;
    Ok(AngleStudy { mean_sin, trials })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaCheck {
    pub frequency: f64,
    /// `1 − N^(−1/8)`.
    pub bound: f64,
    /// `(1 − 1/ε)·λ′₃`.
    pub threshold: f64,
}

/// Fraction of trials whose perturbed λ₃ stays at or above `(1 − 1/ε)·λ′₃`.
/// `epsilon = ∞` gives the threshold λ′₃.
pub fn lemma_check(g: &Graph, q: f64, epsilon: f64, count: usize, seed: u64) -> Result<LemmaCheck, SpectralError> {
    validate(q, Some(epsilon))?;
    let (clean, trials) = trials(g, q, count, seed)?;
    Ok(lemma_from(&clean.values, &trials, epsilon))
}

fn lemma_from(clean: &[f64], trials: &[Trial], epsilon: f64) -> LemmaCheck {
    let threshold = (1.0 - 1.0 / epsilon) * clean[2];
    // Rounding in the solver can put an unperturbed λ₃ a few ulps under itself.
    let tol = 1e-9 * clean.last().copied().unwrap_or(0.0).max(1.0);
    let hits = trials.iter().filter(|t| t.lambda3 >= threshold - tol).count();
    LemmaCheck {
        frequency: hits as f64 / trials.len() as f64,
        bound: 1.0 - (clean.len() as f64).powf(-0.125),
        threshold,
    }
}

/// Everything the `spectral` command reports.
#[derive(Debug, Clone)]
pub struct Verification {
    pub report: SpectralReport,
    pub angles: AngleStudy,
    pub lemma: LemmaCheck,
}

impl Verification {
    /// Shares one set of perturbation trials between the angle and λ₃ checks.
    pub fn run(g: &Graph, q: f64, epsilon: f64, count: usize, seed: u64) -> Result<Self, SpectralError> {
        let report = check_assumption(g, q, epsilon)?;
        let (clean, trials) = trials(g, q, count, seed)?;
        let mean_sin = trials.iter().map(|t| t.sin).sum::<f64>() / count as f64;
        let lemma = lemma_from(&clean.values, &trials, epsilon);
        Ok(Verification {
            report,
            angles: AngleStudy { mean_sin, trials },
            lemma,
        })
    }

    /// Whether every non-vacuous Davis–Kahan bound held.
    pub fn davis_kahan_holds(&self) -> bool {
        self.angles
            .trials
            .iter()
            .all(|t| t.davis_kahan.is_none_or(|b| t.sin <= b + 1e-9))
    }

    pub fn to_key_value(&self) -> String {
        let r = &self.report;
        let n = r.eigenvalues.len();
        let bound = r.angle_bound();
        let fmt_opt = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.6}"));
        let vacuous = self.angles.trials.iter().filter(|t| t.davis_kahan.is_none()).count();
        let verdict = |b: bool| if b { "pass" } else { "fail" }.to_string();
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        line("n", n.to_string());
        line("lambda2", format!("{:.6}", r.lambda(2)));
        line("lambda3", format!("{:.6}", r.lambda(3)));
        line("lambdaN", format!("{:.6}", r.lambda_max()));
        line("chi", format!("{:.6}", r.chi));
        line("edge_exponent", format!("{:.6}", r.edge_exponent));
        line("beta", format!("{:.6}", r.beta));
        line("kappa", fmt_opt(r.kappa));
        line("assumption1", verdict(r.assumption1_holds));
        line("assumption2", verdict(r.assumption2_holds));
        line("trials", self.angles.trials.len().to_string());
        line("mean_sin", format!("{:.6}", self.angles.mean_sin));
        line("bound", fmt_opt(r.kappa.map(|k| 1.0 / k)));
        line("mean_sin_le_bound", verdict(self.angles.mean_sin <= bound));
        line("davis_kahan", verdict(self.davis_kahan_holds()));
        line("davis_kahan_vacuous", vacuous.to_string());
        line("lemma_freq", format!("{:.6}", self.lemma.frequency));
        line("lemma_bound", format!("{:.6}", self.lemma.bound));
        line("lemma", verdict(self.lemma.frequency >= self.lemma.bound));
        s
    }
}
