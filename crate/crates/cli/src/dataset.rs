//! Reading and writing graph collections.

use crate::UsageError;
use anyhow::{Context, Result};
use graph_denoise::graph::{parse_graph, write_graph, Graph};
use graph_denoise::tu::load_tu_dataset;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct Entry {
    pub graph: Graph,
    pub label: Option<i64>,
}

fn looks_like_gdn(text: &str) -> bool {
    let Some(first) = text.lines().find(|l| !l.trim().is_empty()) else {
        return false;
    };
    let fields: Vec<&str> = first.split_whitespace().collect();
    fields.len() == 3 && fields.iter().all(|f| f.parse::<usize>().is_ok())
}

/// Loads a single GDN file, a manifest of GDN paths, or a TU dataset directory.
pub fn load(path: &Path) -> Result<Vec<Entry>> {
    if !path.exists() {
        return Err(UsageError(format!("input {} does not exist", path.display())).into());
    }
    if path.is_dir() {
        let graphs = load_tu_dataset(path).with_context(|| format!("loading TU dataset {}", path.display()))?;
        return Ok(graphs
            .into_iter()
            .map(|g| Entry {
                graph: g.graph,
                label: g.label,
            })
            .collect());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if looks_like_gdn(&text) {
        let graph = parse_graph(text.as_bytes()).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(vec![Entry { graph, label: None }]);
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let file = base.join(cols.next().unwrap().trim());
        let label = cols
            .next()
            .map(|s| s.trim().parse::<i64>())
            .transpose()
            .with_context(|| format!("{}:{}: bad label", path.display(), no + 1))?;
        let bytes = std::fs::read(&file).with_context(|| format!("{}:{}: reading {}", path.display(), no + 1, file.display()))?;
        let graph = parse_graph(&bytes).with_context(|| format!("parsing {}", file.display()))?;
        entries.push(Entry { graph, label });
    }
    if entries.is_empty() {
        return Err(UsageError(format!("{} lists no graphs", path.display())).into());
    }
    Ok(entries)
}

pub fn graph_name(index: usize) -> String {
    format!("graph_{index:04}")
}

/// Writes `dir/<sub>/graph_NNNN.gdn` for every graph and a manifest listing
/// them relative to `dir`. Returns the manifest path.
pub fn write(dir: &Path, sub: &str, manifest: &str, entries: &[(&Graph, Option<i64>)]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join(sub))?;
    let mut listing = String::new();
    for (i, (g, label)) in entries.iter().enumerate() {
        let rel = format!("{sub}/{}.gdn", graph_name(i));
        write_graph(&dir.join(&rel), g).with_context(|| format!("writing {rel}"))?;
        match label {
            Some(l) => writeln!(listing, "{rel}\t{l}")?,
            None => writeln!(listing, "{rel}")?,
        }
    }
    let path = dir.join(manifest);
    std::fs::write(&path, listing)?;
    Ok(path)
}

/// One line per graph of space-separated node labels.
pub fn write_labels(path: &Path, labels: &[Vec<usize>]) -> Result<()> {
    let mut out = String::new();
    for row in labels {
        let cells: Vec<String> = row.iter().map(|l| l.to_string()).collect();
        writeln!(out, "{}", cells.join(" "))?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .map(|(no, line)| {
            line.split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("{}:{}: bad label", path.display(), no + 1))
        })
        .collect()
}
