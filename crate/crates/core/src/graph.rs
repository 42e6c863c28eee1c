//! Simple undirected attributed graphs, sparse matrices and the GDN text format.
//!
//! A [`Graph`] stores its edges as sorted unordered pairs `(i, j)` with
//! `i < j`. Adjacency, degree and Laplacian matrices are materialized on
//! demand as [`Csr`] matrices, which keeps every heavy operation linear in
//! the number of edges.
//!
//! ## GDN text format
//!
//! ```text
//! N M d
//! i j          (M lines, i < j, 0-indexed)
//! x_1 ... x_d  (N lines, omitted when d = 0)
//! ```

use ndarray::Array2;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("endpoint {endpoint} ≥ n={n}")]
    EndpointOutOfRange { endpoint: usize, n: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("feature matrix has {rows} rows, expected {n}")]
    FeatureRows { rows: usize, n: usize },
    #[error("node count mismatch: {0} vs {1}")]
    NodeCountMismatch(usize, usize),
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Graph {
        line: usize,
        #[source]
        source: GraphError,
    },
    #[error("input is not valid UTF-8")]
    Utf8,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ParseError {
    fn syntax(line: usize, message: impl Into<String>) -> Self {
        ParseError::Syntax {
            line,
            message: message.into(),
        }
    }
}

/// An undirected, unweighted graph with a dense node-feature matrix.
///
/// Immutable once built; every constructor validates symmetry-by-construction
/// (unordered pairs), absence of self-loops and duplicate edges, and bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
}

impl Graph {
    /// Builds a graph from unordered pairs. Pairs may be given in either
    /// orientation; they are normalized to `i < j` and sorted.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Array2<f64>,
    ) -> Result<Self, GraphError> {
        if features.nrows() != n {
            return Err(GraphError::FeatureRows {
                rows: features.nrows(),
                n,
            });
        }
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            out.push(normalize_pair(n, a, b)?);
        }
        out.sort_unstable();
        if let Some(w) = out.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        Ok(Self {
            n,
            edges: out,
            features,
        })
    }

    /// Graph without node attributes (`d = 0`).
    pub fn unattributed(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        Self::new(n, edges, Array2::zeros((n, 0)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted unordered pairs with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search(&key).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Neighbor lists, each sorted ascending.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Same nodes and features, different edge set.
    pub fn with_edges(
        &self,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        Self::new(self.n, edges, self.features.clone())
    }

    /// Relabels node `i` as `perm[i]`, carrying features along.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n, "permutation length");
        let mut features = Array2::zeros(self.features.raw_dim());
        for (i, &p) in perm.iter().enumerate() {
            features.row_mut(p).assign(&self.features.row(i));
        }
        Self::new(
            self.n,
            self.edges.iter().map(|&(i, j)| (perm[i], perm[j])),
            features,
        )
        .expect("permutation of a valid graph is valid")
    }

    /// Number of unordered node pairs whose adjacency differs.
    pub fn edge_difference(&self, other: &Graph) -> Result<usize, GraphError> {
        if self.n != other.n {
            return Err(GraphError::NodeCountMismatch(self.n, other.n));
        }
        let (a, b) = (&self.edges, &other.edges);
        let (mut p, mut q, mut common) = (0, 0, 0);
        while p < a.len() && q < b.len() {
            match a[p].cmp(&b[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    common += 1;
                    p += 1;
                    q += 1;
                }
            }
        }
        Ok(a.len() + b.len() - 2 * common)
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub fn adjacency(&self) -> Csr {
        let entries = self
            .edges
            .iter()
            .flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)]);
        Csr::from_triplets(self.n, self.n, entries)
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` is the degree matrix of `A + I`.
    pub fn normalized_adjacency(&self) -> Csr {
        let deg = self.degrees();
        let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
        let entries = self
            .edges
            .iter()
            .flat_map(|&(i, j)| {
                let w = inv_sqrt[i] * inv_sqrt[j];
                [(i, j, w), (j, i, w)]
            })
            .chain((0..self.n).map(|i| (i, i, inv_sqrt[i] * inv_sqrt[i])));
        Csr::from_triplets(self.n, self.n, entries)
    }

    pub fn laplacian(&self) -> LaplacianPair {
        laplacian(self)
    }

    pub fn to_gdn(&self) -> String {
        serialize_graph(self)
    }
}

fn normalize_pair(n: usize, a: usize, b: usize) -> Result<(usize, usize), GraphError> {
    for endpoint in [a, b] {
        if endpoint >= n {
            return Err(GraphError::EndpointOutOfRange { endpoint, n });
        }
    }
    match a.cmp(&b) {
        std::cmp::Ordering::Less => Ok((a, b)),
        std::cmp::Ordering::Greater => Ok((b, a)),
        std::cmp::Ordering::Equal => Err(GraphError::SelfLoop(a)),
    }
}

/// Compressed sparse row matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut triplets: Vec<(usize, usize, f64)> = entries.into_iter().collect();
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_triplets(n, n, values.iter().enumerate().map(|(i, &v)| (i, i, v)))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    /// `self · dense`.
    pub fn matmul(&self, dense: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, dense.nrows(), "sparse·dense inner dimension");
        let mut out = Array2::zeros((self.rows, dense.ncols()));
        for r in 0..self.rows {
            let mut out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &dense.row(c));
            }
        }
        out
    }

    /// `selfᵀ · dense`.
    pub fn transpose_matmul(&self, dense: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.rows, dense.nrows(), "sparseᵀ·dense inner dimension");
        let mut out = Array2::zeros((self.cols, dense.ncols()));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &dense.row(r));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] += v;
            }
        }
        out
    }
}

/// Degree vector and combinatorial Laplacian `L = D − A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPair {
    pub degree: Vec<usize>,
    pub laplacian: Csr,
}

impl LaplacianPair {
    pub fn degree_matrix(&self) -> Csr {
        let d: Vec<f64> = self.degree.iter().map(|&d| d as f64).collect();
        Csr::diagonal(&d)
    }
}

pub fn laplacian(g: &Graph) -> LaplacianPair {
    let degree = g.degrees();
    let entries = g
        .edges()
        .iter()
        .flat_map(|&(i, j)| [(i, j, -1.0), (j, i, -1.0)])
        .chain(degree.iter().enumerate().map(|(i, &d)| (i, i, d as f64)));
    LaplacianPair {
        laplacian: Csr::from_triplets(g.n(), g.n(), entries),
        degree,
    }
}

/// Parses one graph in GDN text format.
pub fn parse_graph(bytes: &[u8]) -> Result<Graph, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ParseError::Utf8)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| ParseError::syntax(1, "missing header"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 3 {
        return Err(ParseError::syntax(line_no, "header must be `N M d`"));
    }
    let field = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| ParseError::syntax(line_no, format!("malformed header: bad {what} `{s}`")))
    };
    let n = field(head[0], "N")?;
    let m = field(head[1], "M")?;
    let d = field(head[2], "d")?;

    let mut edges = Vec::with_capacity(m);
    let mut seen = HashSet::with_capacity(m);
    for k in 0..m {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| ParseError::syntax(k + 2, format!("expected {m} edge lines, found {k}")))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(ParseError::syntax(line_no, "edge line must be `i j`"));
        }
        let mut ends = [0usize; 2];
        for (slot, s) in ends.iter_mut().zip(&parts) {
            *slot = s
                .parse()
                .map_err(|_| ParseError::syntax(line_no, format!("bad node index `{s}`")))?;
        }
        let pair = normalize_pair(n, ends[0], ends[1]).map_err(|source| ParseError::Graph {
            line: line_no,
            source,
        })?;
        if !seen.insert(pair) {
            return Err(ParseError::Graph {
                line: line_no,
                source: GraphError::DuplicateEdge(pair.0, pair.1),
            });
        }
        edges.push(pair);
    }

    let mut features = Array2::zeros((n, d));
    if d > 0 {
        for r in 0..n {
            let (line_no, line) = lines.next().ok_or_else(|| {
                ParseError::syntax(m + r + 2, format!("expected {n} feature lines, found {r}"))
            })?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != d {
                return Err(ParseError::syntax(
                    line_no,
                    format!("expected {d} features, found {}", parts.len()),
                ));
            }
            for (c, s) in parts.iter().enumerate() {
                features[[r, c]] = s
                    .parse()
                    .map_err(|_| ParseError::syntax(line_no, format!("bad float `{s}`")))?;
            }
        }
    }
    if let Some((line_no, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(ParseError::syntax(
            line_no,
            format!("unexpected trailing content `{extra}`"),
        ));
    }

    Graph::new(n, edges, features).map_err(|source| ParseError::Graph { line: 1, source })
}

/// Canonical GDN text: sorted edges, shortest round-trip float formatting.
pub fn serialize_graph(g: &Graph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", g.n(), g.num_edges(), g.feature_dim());
    for &(i, j) in g.edges() {
        let _ = writeln!(out, "{i} {j}");
    }
    if g.feature_dim() > 0 {
        for row in g.features().rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn read_graph(path: &Path) -> Result<Graph, ParseError> {
    let bytes = std::fs::read(path).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_graph(&bytes)
}

pub fn write_graph(path: &Path, g: &Graph) -> std::io::Result<()> {
    std::fs::write(path, serialize_graph(g))
}
