//! Attributed graphs: features, symmetric CSR adjacency, optional anomaly
//! labels, the canonical text formats, and GCN adjacency normalization.
//!
//! File formats (UTF-8, LF-terminated):
//! - edges: one undirected edge per line, `u v` separated by a tab or spaces;
//!   blank lines and lines starting with `#` are ignored.
//! - features: one node per line, whitespace-separated reals; line index is
//!   the node id.
//! - labels: one `0`/`1` per line; line index is the node id.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    features: Matrix,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    labels: Option<Vec<u8>>,
}

impl AttributedGraph {
    /// Builds a graph from an undirected edge list. Reversed and repeated
    /// entries collapse to one edge; self-loops are rejected.
    pub fn new(features: Matrix, edges: &[(usize, usize)], labels: Option<Vec<u8>>) -> Result<Self> {
        let n = features.rows();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} nodes", l.len())));
            }
            if let Some(bad) = l.iter().find(|&&x| x > 1) {
                return Err(Error::Argument(format!("label value {bad} is not 0 or 1")));
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(Error::Range { id, num_nodes: n });
                }
            }
            if u == v {
                return Err(Error::Argument(format!("self-loop on node {u}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        Ok(Self::from_adjacency_lists(features, adj, labels))
    }

    fn from_adjacency_lists(features: Matrix, mut adj: Vec<Vec<usize>>, labels: Option<Vec<u8>>) -> Self {
        let mut offsets = Vec::with_capacity(adj.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        Self {
            features,
            offsets,
            targets,
            labels,
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    #[inline]
    pub fn feature_row(&self, v: usize) -> &[f64] {
        self.features.row(v)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn is_anomaly(&self, v: usize) -> bool {
        self.labels.as_ref().is_some_and(|l| l[v] == 1)
    }

    /// Sorted neighbor ids of `v`.
    pub fn neighbors(&self, v: usize) -> Result<&[usize]> {
        if v >= self.num_nodes() {
            return Err(Error::Range {
                id: v,
                num_nodes: self.num_nodes(),
            });
        }
        Ok(self.neighbors_unchecked(v))
    }

    #[inline]
    pub(crate) fn neighbors_unchecked(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    #[inline]
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors_unchecked(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors_unchecked(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::Shape(format!(
                "replacement features {:?} differ from {:?}",
                features.shape(),
                self.features.shape()
            )));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.num_nodes()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&x| x > 1) {
            return Err(Error::Argument(format!("label value {bad} is not 0 or 1")));
        }
        Ok(Self {
            labels: Some(labels),
            ..self.clone()
        })
    }

    /// Returns a copy with the extra undirected edges merged in.
    pub fn with_added_edges(&self, extra: &[(usize, usize)]) -> Result<Self> {
        let mut all: Vec<(usize, usize)> = self.edges().collect();
        all.extend_from_slice(extra);
        Self::new(self.features.clone(), &all, self.labels.clone())
    }

    pub fn load(edge_path: &Path, feature_path: &Path, label_path: Option<&Path>) -> Result<Self> {
        let features = parse_features(feature_path, &read(feature_path)?)?;
        let edges = parse_edges(edge_path, &read(edge_path)?)?;
        let labels = match label_path {
            Some(p) => Some(parse_labels(p, &read(p)?)?),
            None => None,
        };
        Self::new(features, &edges, labels)
    }

    pub fn save(&self, edge_path: &Path, feature_path: &Path, label_path: Option<&Path>) -> Result<()> {
        write(edge_path, &self.edges_text())?;
        write(feature_path, &self.features_text())?;
        if let Some(p) = label_path {
            write(p, &self.labels_text())?;
        }
        Ok(())
    }

    pub fn edges_text(&self) -> String {
        let mut s = String::new();
        for (u, v) in self.edges() {
            let _ = writeln!(s, "{u}\t{v}");
        }
        s
    }

    pub fn features_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.num_nodes() {
            for (j, x) in self.features.row(i).iter().enumerate() {
                if j > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{x}");
            }
            s.push('\n');
        }
        s
    }

    /// Label file contents; all zeros when the graph carries no labels.
    pub fn labels_text(&self) -> String {
        let mut s = String::with_capacity(2 * self.num_nodes());
        for v in 0..self.num_nodes() {
            s.push(if self.is_anomaly(v) { '1' } else { '0' });
            s.push('\n');
        }
        s
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn parse_edges(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_error(path, i + 1, "expected two node ids"));
        };
        let parse = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| parse_error(path, i + 1, format!("invalid node id {t:?}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if u == v {
            return Err(parse_error(path, i + 1, format!("self-loop on node {u}")));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn parse_features(path: &Path, text: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let start = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| parse_error(path, i + 1, format!("invalid number {tok:?}")))?;
            if !x.is_finite() {
                return Err(parse_error(path, i + 1, "non-finite feature value"));
            }
            data.push(x);
        }
        let width = data.len() - start;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::Shape(format!(
                    "{}:{}: {width} features, expected {c}",
                    path.display(),
                    i + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

pub fn parse_labels(path: &Path, text: &str) -> Result<Vec<u8>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| match line.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(parse_error(path, i + 1, format!("label must be 0 or 1, got {other:?}"))),
        })
        .collect()
}

/// Symmetrically normalized adjacency with self-loops,
/// `D̃^(-1/2) (A + I) D̃^(-1/2)`, stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: Matrix,
}

impl NormalizedAdjacency {
    /// Normalizes a dense symmetric 0/1 adjacency without self-loops.
    pub fn from_binary(adj: &Matrix) -> Result<Self> {
        let (n, m) = adj.shape();
        if n != m {
            return Err(Error::Shape(format!("adjacency is {n}x{m}")));
        }
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / (1.0 + adj.row(i).iter().sum::<f64>()).sqrt())
            .collect();
        let mut matrix = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let a = if i == j { 1.0 } else { adj.get(i, j) };
                if a != 0.0 {
                    matrix.set(i, j, a * inv_sqrt[i] * inv_sqrt[j]);
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }
}

/// Dense 0/1 adjacency of the subgraph induced by `nodes`, in list order.
/// Repeated ids after their first occurrence are padding slots and stay
/// isolated.
pub fn induced_adjacency(g: &AttributedGraph, nodes: &[usize]) -> Result<Matrix> {
    let k = nodes.len();
    let mut first = vec![true; k];
    for i in 0..k {
        if nodes[i] >= g.num_nodes() {
            return Err(Error::Range {
                id: nodes[i],
                num_nodes: g.num_nodes(),
            });
        }
        first[i] = !nodes[..i].contains(&nodes[i]);
    }
    let mut a = Matrix::zeros(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            if first[i] && first[j] && g.has_edge(nodes[i], nodes[j]) {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    Ok(a)
}

/// Normalized adjacency of the whole graph, or of the subgraph induced by
/// `node_subset` (in the given order). The whole-graph form is dense and is
/// meant for small graphs.
pub fn normalize_adjacency(g: &AttributedGraph, node_subset: Option<&[usize]>) -> Result<NormalizedAdjacency> {
    let adj = match node_subset {
        Some(nodes) => induced_adjacency(g, nodes)?,
        None => {
            let n = g.num_nodes();
            let mut a = Matrix::zeros(n, n);
            for (u, v) in g.edges() {
                a.set(u, v, 1.0);
                a.set(v, u, 1.0);
            }
            a
        }
    };
    NormalizedAdjacency::from_binary(&adj)
}
