//! Fixed-size anonymized subgraph views via random walk with restart.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{induced_adjacency, AttributedGraph, NormalizedAdjacency};
use crate::linalg::Matrix;

/// Walk steps allowed per requested node before padding kicks in.
pub const STEP_BUDGET_PER_NODE: usize = 100;

pub const DEFAULT_RESTART_PROB: f64 = 0.5;

/// A K-node view centred on `target`. Position 0 is always the target.
/// Slots past the distinct nodes a walk could reach repeat the target id;
/// those padding slots are isolated and carry zero features.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub target: usize,
    pub nodes: Vec<usize>,
    pub adj_norm: NormalizedAdjacency,
    pub features: Matrix,
}

impl Subgraph {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Number of slots holding distinct sampled nodes (target included).
    pub fn distinct_len(&self) -> usize {
        1 + self.nodes[1..].iter().filter(|&&v| v != self.target).count()
    }
}

/// Collects up to `k` distinct nodes (target first) by a random walk that
/// returns to `target` with probability `restart_prob` before each step.
/// Short lists are padded by repeating the target.
pub fn rwr_nodes<R: Rng>(
    g: &AttributedGraph,
    target: usize,
    k: usize,
    restart_prob: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Argument("subgraph size must be at least 1".into()));
    }
    if !(restart_prob > 0.0 && restart_prob < 1.0) {
        return Err(Error::Argument(format!(
            "restart probability {restart_prob} outside (0, 1)"
        )));
    }
    if target >= g.num_nodes() {
        return Err(Error::Range {
            id: target,
            num_nodes: g.num_nodes(),
        });
    }
    let mut nodes = Vec::with_capacity(k);
    nodes.push(target);
    if g.degree(target) > 0 {
        let mut current = target;
        for _ in 0..STEP_BUDGET_PER_NODE * k {
            if nodes.len() == k {
                break;
            }
            if rng.gen::<f64>() < restart_prob {
                current = target;
            }
            let nbrs = g.neighbors_unchecked(current);
            current = nbrs[rng.gen_range(0..nbrs.len())];
            if !nodes.contains(&current) {
                nodes.push(current);
            }
        }
    }
    nodes.resize(k, target);
    Ok(nodes)
}

/// Samples a view around `target`: RWR node collection, induced normalized
/// adjacency, copied features, then anonymization of the target row.
pub fn rwr_sample<R: Rng>(
    g: &AttributedGraph,
    target: usize,
    k: usize,
    restart_prob: f64,
    rng: &mut R,
) -> Result<Subgraph> {
    let nodes = rwr_nodes(g, target, k, restart_prob, rng)?;
    let adj_norm = NormalizedAdjacency::from_binary(&induced_adjacency(g, &nodes)?)?;
    let mut features = Matrix::zeros(k, g.feature_dim());
    for (slot, &v) in nodes.iter().enumerate().skip(1) {
        if v != target {
            features.row_mut(slot).copy_from_slice(g.feature_row(v));
        }
    }
    let sub = Subgraph {
        target,
        nodes,
        adj_norm,
        features,
    };
    Ok(anonymize(sub))
}

/// Zeroes the target's feature row; other rows are untouched.
pub fn anonymize(mut sub: Subgraph) -> Subgraph {
    sub.features.row_mut(0).fill(0.0);
    sub
}
