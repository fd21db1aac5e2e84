//! Synthetic anomaly injection: structural anomalies (planted cliques) and
//! contextual anomalies (feature swap with the farthest of a random pool).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::linalg::Matrix;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionSpec {
    pub num_cliques: usize,
    pub clique_size: usize,
    pub num_contextual: usize,
    pub num_candidates: usize,
    pub seed: u64,
}

impl Default for InjectionSpec {
    /// The Cora-sized setting: 5 cliques of 15 plus 75 contextual anomalies.
    fn default() -> Self {
        Self {
            num_cliques: 5,
            clique_size: 15,
            num_contextual: 75,
            num_candidates: 50,
            seed: 0,
        }
    }
}

impl InjectionSpec {
    pub fn num_structural(&self) -> usize {
        self.num_cliques * self.clique_size
    }

    pub fn total(&self) -> usize {
        self.num_structural() + self.num_contextual
    }
}

/// One contextual anomaly: `target` received a copy of `source`'s original
/// feature row, the farthest member of `candidates`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSwap {
    pub target: usize,
    pub source: usize,
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Injection {
    pub graph: AttributedGraph,
    pub structural_groups: Vec<Vec<usize>>,
    pub contextual: Vec<FeatureSwap>,
}

impl Injection {
    /// All injected ids, ascending.
    pub fn anomaly_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .structural_groups
            .iter()
            .flatten()
            .copied()
            .chain(self.contextual.iter().map(|s| s.target))
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn manifest(&self, spec: &InjectionSpec) -> InjectionManifest {
        InjectionManifest {
            seed: spec.seed,
            num_cliques: spec.num_cliques,
            clique_size: spec.clique_size,
            num_contextual: spec.num_contextual,
            num_candidates: spec.num_candidates,
            anomaly_ids: self.anomaly_ids(),
            structural_groups: self.structural_groups.clone(),
            contextual: self.contextual.clone(),
        }
    }
}

/// JSON manifest written next to an injected graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionManifest {
    pub seed: u64,
    pub num_cliques: usize,
    pub clique_size: usize,
    pub num_contextual: usize,
    pub num_candidates: usize,
    pub anomaly_ids: Vec<usize>,
    pub structural_groups: Vec<Vec<usize>>,
    pub contextual: Vec<FeatureSwap>,
}

fn base_labels(g: &AttributedGraph) -> Vec<u8> {
    g.labels()
        .map(<[u8]>::to_vec)
        .unwrap_or_else(|| vec![0; g.num_nodes()])
}

/// Plants `num_cliques` fully connected groups of `clique_size` nodes chosen
/// among nodes not yet labeled anomalous. Returns the new graph and the
/// groups in selection order.
pub fn inject_structural<R: Rng>(
    g: &AttributedGraph,
    num_cliques: usize,
    clique_size: usize,
    rng: &mut R,
) -> Result<(AttributedGraph, Vec<Vec<usize>>)> {
    let needed = num_cliques * clique_size;
    let mut labels = base_labels(g);
    let mut pool: Vec<usize> = (0..g.num_nodes()).filter(|&v| labels[v] == 0).collect();
    if needed > pool.len() {
        return Err(Error::Capacity(format!(
            "{needed} structural anomalies requested but only {} unlabeled nodes",
            pool.len()
        )));
    }
    if needed == 0 {
        return Ok((g.with_labels(labels)?, Vec::new()));
    }
    let (chosen, _) = pool.partial_shuffle(rng, needed);
    let groups: Vec<Vec<usize>> = chosen.chunks(clique_size).map(<[usize]>::to_vec).collect();

    let mut extra = Vec::with_capacity(num_cliques * clique_size * (clique_size - 1) / 2);
    for group in &groups {
        for (i, &u) in group.iter().enumerate() {
            labels[u] = 1;
            for &v in &group[i + 1..] {
                extra.push((u, v));
            }
        }
    }
    let out = g.with_added_edges(&extra)?.with_labels(labels)?;
    Ok((out, groups))
}

/// Replaces each of `num_targets` randomly chosen (unlabeled) nodes' features
/// with those of the farthest node, by Euclidean distance, among
/// `num_candidates` auxiliary nodes drawn without replacement. Auxiliary
/// nodes exclude already-labeled anomalies and this call's targets; copied
/// rows always come from the input graph. Distance ties go to the lowest id.
pub fn inject_contextual<R: Rng>(
    g: &AttributedGraph,
    num_targets: usize,
    num_candidates: usize,
    rng: &mut R,
) -> Result<(AttributedGraph, Vec<FeatureSwap>)> {
    let n = g.num_nodes();
    let mut labels = base_labels(g);
    if num_targets == 0 {
        return Ok((g.with_labels(labels)?, Vec::new()));
    }
    if num_candidates >= n {
        return Err(Error::Capacity(format!(
            "candidate pool of {num_candidates} needs more than {n} nodes"
        )));
    }
    if num_candidates == 0 {
        return Err(Error::Argument("candidate pool must be nonempty".into()));
    }
    let mut unlabeled: Vec<usize> = (0..n).filter(|&v| labels[v] == 0).collect();
    if num_targets > unlabeled.len() {
        return Err(Error::Capacity(format!(
            "{num_targets} contextual anomalies requested but only {} unlabeled nodes",
            unlabeled.len()
        )));
    }
    let (targets, rest) = unlabeled.partial_shuffle(rng, num_targets);
    let targets = targets.to_vec();
    let mut auxiliary = rest.to_vec();
    auxiliary.sort_unstable();
    if num_candidates > auxiliary.len() {
        return Err(Error::Capacity(format!(
            "candidate pool of {num_candidates} exceeds the {} eligible auxiliary nodes",
            auxiliary.len()
        )));
    }

    let original = g.features();
    let mut features: Matrix = original.clone();
    let mut swaps = Vec::with_capacity(targets.len());
    for &t in &targets {
        let pool: Vec<usize> = rand::seq::index::sample(rng, auxiliary.len(), num_candidates)
            .iter()
            .map(|i| auxiliary[i])
            .collect();
        let mut best: Option<(f64, usize)> = None;
        for &c in &pool {
            let d = squared_distance(original.row(t), original.row(c));
            best = match best {
                Some((bd, bc)) if bd > d || (bd == d && bc < c) => Some((bd, bc)),
                _ => Some((d, c)),
            };
        }
        let (_, source) = best.expect("candidate pool is nonempty");
        features.row_mut(t).copy_from_slice(original.row(source));
        labels[t] = 1;
        swaps.push(FeatureSwap {
            target: t,
            source,
            candidates: pool,
        });
    }
    let out = g.with_features(features)?.with_labels(labels)?;
    Ok((out, swaps))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Full injection protocol: contextual targets first, then structural
/// groups, from one RNG stream seeded by `spec.seed`.
pub fn inject(g: &AttributedGraph, spec: &InjectionSpec) -> Result<Injection> {
    let mut rng = rng::stream(spec.seed, &[tag::INJECT]);
    let (g1, contextual) = inject_contextual(g, spec.num_contextual, spec.num_candidates, &mut rng)?;
    let (graph, structural_groups) = inject_structural(&g1, spec.num_cliques, spec.clique_size, &mut rng)?;
    Ok(Injection {
        graph,
        structural_groups,
        contextual,
    })
}
