//! Reader for the public TU graph-benchmark text layout (`DS_A.txt`, ...).

use crate::graph::{Graph, GraphError};
use ndarray::Array2;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TuError {
    #[error("missing required file {0}")]
    MissingFile(PathBuf),
    #[error("no `*_A.txt` file in {0}")]
    NoDataset(PathBuf),
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("no graphs found")]
    Empty,
    #[error("indicator/edge mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One graph of a TU dataset together with its class label, when present.
#[derive(Debug, Clone)]
pub struct TuGraph {
    pub graph: Graph,
    pub label: Option<i64>,
}

/// Loads every graph of the TU dataset in `dir`.
///
/// The dataset name is taken from the `<DS>_A.txt` file. Node labels, when
/// present, become one-hot features over the sorted set of distinct labels.
pub fn load_tu_dataset(dir: &Path) -> Result<Vec<TuGraph>, TuError> {
    let name = dataset_name(dir)?;
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_path = file("graph_indicator");
    if !indicator_path.exists() {
        return Err(TuError::MissingFile(indicator_path));
    }
    let indicator: Vec<usize> = read_column(&indicator_path)?;
    if indicator.is_empty() {
        return Err(TuError::Empty);
    }
    let node_labels: Option<Vec<i64>> = optional(&file("node_labels"), read_column)?;
    let graph_labels: Option<Vec<i64>> = optional(&file("graph_labels"), read_column)?;
    let edge_pairs = read_pairs(&file("A"))?;

    // Graph ids are 1-based and contiguous in the public layout; tolerate gaps.
    let ids: BTreeSet<usize> = indicator.iter().copied().collect();
    let slot: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(s, &id)| (id, s)).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    let mut local = vec![0usize; indicator.len()];
    for (node, &gid) in indicator.iter().enumerate() {
        let s = slot[&gid];
        local[node] = members[s].len();
        members[s].push(node);
    }

    let mut edges: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); ids.len()];
    for (line, (a, b)) in edge_pairs {
        let (a, b) = (
            checked_node(a, indicator.len(), line)?,
            checked_node(b, indicator.len(), line)?,
        );
        if indicator[a] != indicator[b] {
            return Err(TuError::Mismatch(format!(
                "edge on line {line} joins graphs {} and {}",
                indicator[a], indicator[b]
            )));
        }
        if a == b {
            continue;
        }
        let (i, j) = (local[a], local[b]);
        edges[slot[&indicator[a]]].insert((i.min(j), i.max(j)));
    }

    let vocabulary: Option<BTreeMap<i64, usize>> = node_labels.as_ref().map(|labels| {
        labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(c, l)| (l, c))
            .collect()
    });
    if let Some(labels) = &node_labels {
        if labels.len() != indicator.len() {
            return Err(TuError::Mismatch(format!(
                "{} node labels for {} nodes",
                labels.len(),
                indicator.len()
            )));
        }
    }
    if let Some(labels) = &graph_labels {
        if labels.len() != ids.len() {
            return Err(TuError::Mismatch(format!(
                "{} graph labels for {} graphs",
                labels.len(),
                ids.len()
            )));
        }
    }

    members
        .iter()
        .zip(edges)
        .enumerate()
        .map(|(s, (nodes, edge_set))| {
            let n = nodes.len();
            let features = match (&node_labels, &vocabulary) {
                (Some(labels), Some(vocab)) => {
                    let mut x = Array2::zeros((n, vocab.len()));
                    for (i, &node) in nodes.iter().enumerate() {
                        x[[i, vocab[&labels[node]]]] = 1.0;
                    }
                    x
                }
                _ => Array2::zeros((n, 0)),
            };
            Ok(TuGraph {
                graph: Graph::new(n, edge_set, features)?,
                label: graph_labels.as_ref().map(|l| l[s]),
            })
        })
        .collect()
}

fn dataset_name(dir: &Path) -> Result<String, TuError> {
    let entries = std::fs::read_dir(dir).map_err(|source| TuError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().map(str::to_owned))
        .filter_map(|f| f.strip_suffix("_A.txt").map(str::to_owned))
        .collect();
    names.sort();
    names
        .into_iter()
        .next()
        .ok_or_else(|| TuError::MissingFile(dir.join("DS_A.txt")))
}

fn read_text(path: &Path) -> Result<String, TuError> {
    std::fs::read_to_string(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => TuError::MissingFile(path.to_path_buf()),
        _ => TuError::Io {
            path: path.to_path_buf(),
            source,
        },
    })
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> TuError {
    TuError::Malformed {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_column<T: std::str::FromStr>(path: &Path) -> Result<Vec<T>, TuError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| malformed(path, i + 1, format!("bad value `{}`", l.trim())))
        })
        .collect()
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, (usize, usize))>, TuError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut it = l.split(',').map(|s| s.trim().parse::<usize>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok((i + 1, (a, b))),
                _ => Err(malformed(path, i + 1, format!("expected `row, col`, got `{l}`"))),
            }
        })
        .collect()
}

fn optional<T>(
    path: &Path,
    read: impl Fn(&Path) -> Result<T, TuError>,
) -> Result<Option<T>, TuError> {
    if path.exists() {
        read(path).map(Some)
    } else {
        Ok(None)
    }
}

fn checked_node(id: usize, total: usize, line: usize) -> Result<usize, TuError> {
    if id == 0 || id > total {
        return Err(TuError::Mismatch(format!(
            "edge on line {line} references node {id}, dataset has {total}"
        )));
    }
    Ok(id - 1)
}
