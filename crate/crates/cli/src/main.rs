mod commands;
mod dataset;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

/// Invalid flags or inputs; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "gdn", version, about = "Blind graph denoising with cluster-masked graph autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate planted-partition graphs with truth labels.
    Synth(SynthArgs),
    /// Add and delete a fixed fraction of edges.
    Noise(NoiseArgs),
    /// Train one cluster network over a collection and write assignments.
    Cluster(ClusterArgs),
    /// Train and refine each graph.
    Denoise(DenoiseArgs),
    /// Compare denoised graphs against clean ones.
    Eval(EvalArgs),
    /// Check the spectral perturbation bounds on a clean graph.
    Spectral(SpectralArgs),
}

#[derive(Args, Serialize, Clone)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Cut {
    /// Expected cut under row-wise rounding.
    Expected,
    /// Trace ratio on the soft assignment.
    Trace,
}

#[derive(Args, Serialize, Clone)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.01)]
    pub varphi: f64,
    /// Cluster count, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_k)]
    pub k: String,
    #[arg(long, value_enum, default_value_t = Cut::Expected)]
    pub cut: Cut,
}

fn parse_k(s: &str) -> Result<String, String> {
    if s == "auto" || s.parse::<usize>().is_ok_and(|k| k >= 1) {
        Ok(s.to_owned())
    } else {
        Err(format!("expected `auto` or a positive integer, got `{s}`"))
    }
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub modularity: f64,
    #[arg(long, default_value_t = 8.0)]
    pub avg_degree: f64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Args, Serialize)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub common: Common,
    /// GDN file, manifest, or TU dataset directory.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub add: f64,
    #[arg(long, default_value_t = 0.1)]
    pub del: f64,
}

#[derive(Args, Serialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Serialize)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Total edge edits; defaults to twice a tenth of the edge count.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub latent_dim: usize,
    /// Also write trained parameters per graph.
    #[arg(long)]
    pub save_params: bool,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub denoised: PathBuf,
    /// Node truth labels, one line per graph.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Predicted clusters, one line per graph.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub wl_h: usize,
}

#[derive(Args, Serialize)]
pub struct SpectralArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub q: f64,
    #[arg(long, default_value_t = 2.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Noise(a) => commands::noise(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Denoise(a) => commands::denoise(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Spectral(a) => commands::spectral(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
