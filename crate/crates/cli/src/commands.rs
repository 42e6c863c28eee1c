use crate::dataset::{self, Entry};
use crate::{ClusterArgs, Common, Cut, DenoiseArgs, EvalArgs, NoiseArgs, SpectralArgs, SynthArgs, TrainFlags, UsageError};
use anyhow::{Context, Result};
use graph_denoise::checkpoint::Checkpoint;
use graph_denoise::cluster::{assign_clusters, train_cluster_net, ClusterTrainConfig, CutRelaxation};
use graph_denoise::metrics::{cluster_metrics, psnr, wl_similarity, MetricError};
use graph_denoise::noise::{inject_noise, NoiseSpec};
use graph_denoise::rng::split;
use graph_denoise::spectral::{SpectralError, Verification};
use graph_denoise::synth::{synth_cluster_graph, SynthError};
use graph_denoise::trainer::{self, resolve_k, KChoice, TrainConfig, TrainError};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a T,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

fn write_manifest<T: Serialize>(common: &Common, command: &str, config: &T, inputs: &[&Path], outputs: &[&str]) -> Result<()> {
    let manifest = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: common.seed,
        config,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(common.out.join("run.json"), text)?;
    Ok(())
}

fn with_pool<T: Send>(common: &Common, work: impl FnOnce() -> T + Send) -> Result<T> {
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(common.jobs).build()?;
    Ok(pool.install(work))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn train_error(e: TrainError) -> anyhow::Error {
    match e {
        TrainError::Invalid(m) => usage(m),
        other => other.into(),
    }
}

fn relaxation(cut: Cut) -> CutRelaxation {
    match cut {
        Cut::Expected => CutRelaxation::Expected,
        Cut::Trace => CutRelaxation::Trace,
    }
}

fn k_choice(flags: &TrainFlags) -> KChoice {
    match flags.k.parse() {
        Ok(k) => KChoice::Fixed(k),
        Err(_) => KChoice::Auto,
    }
}

fn train_config(flags: &TrainFlags, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: flags.epochs,
        lr: flags.lr,
        dropout: flags.dropout,
        varphi: flags.varphi,
        k: k_choice(flags),
        relaxation: relaxation(flags.cut),
        seed,
        ..TrainConfig::default()
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let out = &args.common.out;
    let made: Vec<_> = with_pool(&args.common, || {
        (0..args.count)
            .into_par_iter()
            .map(|i| synth_cluster_graph(args.n, args.k, args.modularity, args.avg_degree, split(args.common.seed, i as u64)))
            .collect::<Result<Vec<_>, SynthError>>()
    })?
    .map_err(|e| usage(e.to_string()))?;
    let graphs: Vec<_> = made.iter().map(|(g, _)| (g, None)).collect();
    dataset::write(out, "graphs", "manifest.txt", &graphs)?;
    let truth: Vec<Vec<usize>> = made.iter().map(|(_, l)| l.clone()).collect();
    dataset::write_labels(&out.join("truth.txt"), &truth)?;
    write_manifest(&args.common, "synth", args, &[], &["manifest.txt", "graphs/", "truth.txt"])
}

pub fn noise(args: &NoiseArgs) -> Result<()> {
    NoiseSpec::new(args.add, args.del, 0)
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    let entries = dataset::load(&args.input)?;
    let noisy = with_pool(&args.common, || {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| inject_noise(&e.graph, &NoiseSpec::new(args.add, args.del, split(args.common.seed, i as u64))))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let out = &args.common.out;
    let clean: Vec<_> = entries.iter().map(|e| (&e.graph, e.label)).collect();
    dataset::write(out, "clean", "clean_manifest.txt", &clean)?;
    let noisy: Vec<_> = noisy.iter().zip(&entries).map(|(g, e)| (g, e.label)).collect();
    dataset::write(out, "graphs", "manifest.txt", &noisy)?;
    write_manifest(
        &args.common,
        "noise",
        args,
        &[&args.input],
        &["manifest.txt", "graphs/", "clean_manifest.txt", "clean/"],
    )
}

/// Most frequent per-graph choice; ties go to the smaller K.
fn consensus_k(choices: &[usize]) -> usize {
    let mut counts = BTreeMap::new();
    for &k in choices {
        *counts.entry(k).or_insert(0usize) += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    counts.into_iter().find(|&(_, c)| c == best).map_or(1, |(k, _)| k)
}

pub fn cluster(args: &ClusterArgs) -> Result<()> {
    let entries = dataset::load(&args.input)?;
    let flags = &args.train;
    let seed = args.common.seed;
    train_config(flags, seed).validate().map_err(train_error)?;
    let graphs: Vec<_> = entries.into_iter().map(|e| e.graph).collect();
    let (k, params, history) = with_pool(&args.common, || -> Result<_> {
        let k = match k_choice(flags) {
            KChoice::Fixed(k) => k,
            KChoice::Auto => {
                let choices = graphs
                    .par_iter()
                    .enumerate()
                    .map(|(i, g)| resolve_k(g, &train_config(flags, split(seed, i as u64))))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(train_error)?;
                consensus_k(&choices)
            }
        };
        let config = ClusterTrainConfig {
            epochs: flags.epochs,
            lr: flags.lr,
            dropout: flags.dropout,
            varphi: flags.varphi,
            relaxation: relaxation(flags.cut),
            seed,
            ..ClusterTrainConfig::default()
        };
        let (params, history) = train_cluster_net(&graphs, k, &config)?;
        Ok((k, params, history))
    })??;
    let labels = graphs
        .iter()
        .map(|g| assign_clusters(g, &params).map(|a| a.labels()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = &args.common.out;
    dataset::write_labels(&out.join("clusters.txt"), &labels)?;
    let mut log = String::from("epoch,l_u\n");
    for (epoch, l) in history.iter().enumerate() {
        writeln!(log, "{},{l:.6}", epoch + 1)?;
    }
    std::fs::write(out.join("cluster_log.csv"), log)?;
    eprintln!("clustered {} graph(s) into k={k}", graphs.len());
    write_manifest(&args.common, "cluster", args, &[&args.input], &["clusters.txt", "cluster_log.csv"])
}

pub fn denoise(args: &DenoiseArgs) -> Result<()> {
    let seed = args.common.seed;
    let config = |i: usize| TrainConfig {
        budget: args.budget,
        latent_dim: args.latent_dim,
        ..train_config(&args.train, split(seed, i as u64))
    };
    config(0).validate().map_err(train_error)?;
    let entries = dataset::load(&args.input)?;
    let results = with_pool(&args.common, || {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| trainer::denoise(&e.graph, &config(i)).with_context(|| format!("graph {i}")))
            .collect::<Vec<_>>()
    })?;
    let mut done = Vec::with_capacity(results.len());
    for r in results {
        done.push(r?);
    }

    let out = &args.common.out;
    let graphs: Vec<_> = done.iter().zip(&entries).map(|(d, e)| (&d.refinement.graph, e.label)).collect();
    dataset::write(out, "graphs", "manifest.txt", &graphs)?;
    let labels: Vec<_> = done.iter().map(|d| d.outcome.assignment.labels()).collect();
    dataset::write_labels(&out.join("clusters.txt"), &labels)?;

    let mut log = String::from("graph,epoch,l_u,l_prior,l_recon,l_total\n");
    let mut summary = String::from("graph,k,epochs,stopped_early,budget,deleted,added,truncated\n");
    for (i, d) in done.iter().enumerate() {
        for row in d.outcome.report.to_csv().lines().skip(1) {
            writeln!(log, "{i},{row}")?;
        }
        let r = &d.refinement;
        writeln!(
            summary,
            "{i},{},{},{},{},{},{},{}",
            d.outcome.report.k,
            d.outcome.report.epochs.len(),
            d.outcome.report.stopped_early,
            d.budget,
            r.deleted.len(),
            r.added.len(),
            r.truncated
        )?;
    }
    std::fs::write(out.join("train_log.csv"), log)?;
    std::fs::write(out.join("summary.csv"), summary)?;
    let mut outputs = vec!["manifest.txt", "graphs/", "clusters.txt", "train_log.csv", "summary.csv"];
    if args.save_params {
        std::fs::create_dir_all(out.join("params"))?;
        for (i, d) in done.iter().enumerate() {
            let ckpt = Checkpoint {
                gvae: d.outcome.gvae.clone(),
                cluster: d.outcome.cluster.clone(),
            };
            ckpt.save(&out.join("params").join(format!("{}.ckpt", dataset::graph_name(i))))?;
        }
        outputs.push("params/");
    }
    write_manifest(&args.common, "denoise", args, &[&args.input], &outputs)
}

fn read_optional_labels(path: Option<&Path>, count: usize, flag: &str) -> Result<Option<Vec<Vec<usize>>>> {
    let Some(path) = path else { return Ok(None) };
    let labels = dataset::read_labels(path)?;
    if labels.len() != count {
        return Err(usage(format!("{flag} has {} lines for {count} graphs", labels.len())));
    }
    Ok(Some(labels))
}

fn cell(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.6}"))
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let clean = dataset::load(&args.clean)?;
    let denoised = dataset::load(&args.denoised)?;
    if clean.len() != denoised.len() {
        return Err(usage(format!(
            "--clean lists {} graphs but --denoised lists {}",
            clean.len(),
            denoised.len()
        )));
    }
    let truth = read_optional_labels(args.truth.as_deref(), clean.len(), "--truth")?;
    let pred = read_optional_labels(args.pred.as_deref(), clean.len(), "--pred")?;
    let rows = with_pool(&args.common, || {
        clean
            .par_iter()
            .zip(&denoised)
            .enumerate()
            .map(|(i, (c, d)): (usize, (&Entry, &Entry))| -> Result<[Option<f64>; 5]> {
                let p = psnr(&c.graph, &d.graph).with_context(|| format!("graph {i}"))?;
                let wl = match wl_similarity(&c.graph, &d.graph, args.wl_h) {
                    Ok(s) => Some(s),
                    Err(MetricError::EmptyHistograms) => None,
                    Err(e) => return Err(e.into()),
                };
                let scores = match (&truth, &pred) {
                    (Some(t), Some(p)) => Some(cluster_metrics(&p[i], &t[i]).with_context(|| format!("graph {i}"))?),
                    _ => None,
                };
                Ok([Some(p), wl, scores.map(|s| s.acc), scores.map(|s| s.nmi), scores.map(|s| s.f1)])
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut csv = String::from("graph_id,psnr,wl,acc,nmi,f1\n");
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|&x| cell(x)).collect();
        writeln!(csv, "{i},{}", cells.join(","))?;
    }
    let means: Vec<String> = (0..5)
        .map(|c| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
            cell((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect();
    writeln!(csv, "mean,{}", means.join(","))?;
    std::fs::write(args.common.out.join("eval.csv"), &csv)?;
    print!("{csv}");
    write_manifest(&args.common, "eval", args, &[&args.clean, &args.denoised], &["eval.csv"])
}

pub fn spectral(args: &SpectralArgs) -> Result<()> {
    let entries = dataset::load(&args.input)?;
    if entries.len() != 1 {
        return Err(usage(format!("--in must hold one graph, found {}", entries.len())));
    }
    let g = &entries[0].graph;
    let verification = with_pool(&args.common, || Verification::run(g, args.q, args.epsilon, args.trials, args.common.seed))?
        .map_err(|e| match e {
            SpectralError::Invalid(m) => usage(m),
            other => other.into(),
        })?;
    let report = verification.to_key_value();
    std::fs::write(args.common.out.join("report.txt"), &report)?;
    print!("{report}");
    write_manifest(&args.common, "spectral", args, &[&args.input], &["report.txt"])
}
