//! Inference-time anomaly scoring. Each node is scored over `R` rounds; a
//! round draws a fresh patch view and context view, scores the positive pair
//! and a negative pair, and records the base score `s̃ - s` per scale. The
//! per-scale score is the round mean plus the population standard
//! deviation, and the final score mixes the two scales with `α`.
//!
//! The negative for node `i` in round `j` pairs `z_i` with the embedding of
//! a uniformly drawn other node's round-`j` view. Every draw is keyed by
//! `(seed, node, round)`, so scoring any subset of nodes gives the same
//! per-node values as scoring them together.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{induced_adjacency, AttributedGraph, NormalizedAdjacency};
use crate::linalg::{axpy, dot, mat_vec, vec_mat, Matrix};
use crate::nn::{relu, sigmoid, ModelParams};
use crate::rng::{self, tag};
use crate::sampler::{rwr_nodes, DEFAULT_RESTART_PROB};

pub const DEFAULT_ROUNDS: usize = 256;
pub const MAX_ROUNDS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub rounds: usize,
    pub alpha: f64,
    pub subgraph_size: usize,
    pub restart_prob: f64,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            rounds: DEFAULT_ROUNDS,
            alpha: 0.8,
            subgraph_size: 4,
            restart_prob: DEFAULT_RESTART_PROB,
            seed: 0,
        }
    }
}

/// `b = s̃ - s`.
#[inline]
pub fn base_score(s: f64, s_neg: f64) -> f64 {
    s_neg - s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub mean: f64,
    pub std: f64,
    pub y: f64,
}

/// Mean, population standard deviation, and `y = mean + std` of one node's
/// base scores at one scale.
pub fn aggregate_rounds(base: &[f64]) -> Result<RoundStats> {
    if base.is_empty() {
        return Err(Error::Argument("at least one round is required".into()));
    }
    let r = base.len() as f64;
    let mean = base.iter().sum::<f64>() / r;
    let var = base.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / r;
    let std = var.sqrt();
    Ok(RoundStats {
        mean,
        std,
        y: mean + std,
    })
}

/// `α·y_c + (1-α)·y_p`.
pub fn combine(y_p: f64, y_c: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(alpha * y_c + (1.0 - alpha) * y_p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: usize,
    pub y: f64,
    pub y_p: f64,
    pub y_c: f64,
    pub mean_b_p: f64,
    pub std_b_p: f64,
    pub mean_b_c: f64,
    pub std_b_c: f64,
    /// Rounds in which a base score came out positive (`s̃ > s`) at either scale.
    pub positive_base_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub rounds: usize,
    pub alpha: f64,
    pub nodes: Vec<NodeReport>,
}

impl AnomalyReport {
    pub fn scores(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.y).collect()
    }

    pub fn node_ids(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.node).collect()
    }

    /// Total count of positive base scores; a trained model is expected to
    /// keep base scores in `[-1, 0]`, so this is a diagnostic.
    pub fn positive_base_rounds(&self) -> usize {
        self.nodes.iter().map(|n| n.positive_base_rounds).sum()
    }

    pub const CSV_HEADER: &'static str = "node_id,y,y_patch,y_context,mean_b_p,std_b_p,mean_b_c,std_b_c";

    /// Score file, values written with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.nodes.len() + 1));
        s.push_str(Self::CSV_HEADER);
        s.push('\n');
        for n in &self.nodes {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                n.node, n.y, n.y_p, n.y_c, n.mean_b_p, n.std_b_p, n.mean_b_c, n.std_b_c
            );
        }
        s
    }
}

/// `(node_id, y)` pairs from a score file.
pub fn read_score_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("node_id,y") {
                return Err(perr(1, "missing score header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let node = cols
            .next()
            .and_then(|c| c.trim().parse::<usize>().ok())
            .ok_or_else(|| perr(i + 1, "bad node id".into()))?;
        let y = cols
            .next()
            .and_then(|c| c.trim().parse::<f64>().ok())
            .ok_or_else(|| perr(i + 1, "bad score".into()))?;
        out.push((node, y));
    }
    Ok(out)
}

/// Model weights folded into per-node projections for fast inference.
struct Projected {
    x_theta: Matrix,
    x_phi: Matrix,
}

impl Projected {
    fn new(g: &AttributedGraph, params: &ModelParams) -> Self {
        let project = |w: &Matrix| {
            let mut out = Matrix::zeros(g.num_nodes(), w.cols());
            for v in 0..g.num_nodes() {
                out.row_mut(v).copy_from_slice(&vec_mat(g.feature_row(v), w));
            }
            out
        };
        Self {
            x_theta: project(&params.theta),
            x_phi: project(&params.phi),
        }
    }
}

/// A view's masked-target embedding (`Target`) or readout (`Mean`), computed
/// from projected rows. Slot 0 and padding slots contribute zero rows.
fn view_embedding(
    g: &AttributedGraph,
    nodes: &[usize],
    projected: &Matrix,
    mean: bool,
) -> Result<Vec<f64>> {
    let adj = NormalizedAdjacency::from_binary(&induced_adjacency(g, nodes)?)?;
    let target = nodes[0];
    let e = projected.cols();
    let rows: Vec<Option<&[f64]>> = nodes
        .iter()
        .enumerate()
        .map(|(slot, &v)| (slot > 0 && v != target).then(|| projected.row(v)))
        .collect();
    let pre_row = |r: usize| {
        let mut pre = vec![0.0; e];
        for (k, row) in rows.iter().enumerate() {
            if let Some(row) = row {
                let a = adj.get(r, k);
                if a != 0.0 {
                    axpy(a, row, &mut pre);
                }
            }
        }
        pre
    };
    if !mean {
        return Ok(pre_row(0).into_iter().map(relu).collect());
    }
    let mut out = vec![0.0; e];
    for r in 0..nodes.len() {
        for (o, p) in out.iter_mut().zip(pre_row(r)) {
            *o += relu(p);
        }
    }
    let k = nodes.len() as f64;
    out.iter_mut().for_each(|x| *x /= k);
    Ok(out)
}

fn round_views(
    g: &AttributedGraph,
    proj: &Projected,
    cfg: &ScoreConfig,
    node: usize,
    round: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let key = |view: u64| [tag::SCORE, view, round as u64, node as u64];
    let mut rp = rng::stream(cfg.seed, &key(tag::PATCH_VIEW));
    let mut rc = rng::stream(cfg.seed, &key(tag::CONTEXT_VIEW));
    let patch = rwr_nodes(g, node, cfg.subgraph_size, cfg.restart_prob, &mut rp)?;
    let context = rwr_nodes(g, node, cfg.subgraph_size, cfg.restart_prob, &mut rc)?;
    Ok((
        view_embedding(g, &patch, &proj.x_theta, false)?,
        view_embedding(g, &context, &proj.x_phi, true)?,
    ))
}

fn score_node(
    g: &AttributedGraph,
    params: &ModelParams,
    proj: &Projected,
    cfg: &ScoreConfig,
    node: usize,
) -> Result<NodeReport> {
    let n = g.num_nodes();
    let z_p: Vec<f64> = proj.x_theta.row(node).iter().map(|&x| relu(x)).collect();
    let z_c: Vec<f64> = proj.x_phi.row(node).iter().map(|&x| relu(x)).collect();
    let wz_p = mat_vec(&params.w_p, &z_p);
    let wz_c = mat_vec(&params.w_c, &z_c);
    let mut b_p = Vec::with_capacity(cfg.rounds);
    let mut b_c = Vec::with_capacity(cfg.rounds);
    let mut positive = 0;
    for round in 0..cfg.rounds {
        let mut neg_rng = rng::stream(cfg.seed, &[tag::SCORE, tag::NEGATIVE, round as u64, node as u64]);
        let other = {
            let r = neg_rng.gen_range(0..n - 1);
            if r >= node {
                r + 1
            } else {
                r
            }
        };
        let (h_p, h_c) = round_views(g, proj, cfg, node, round)?;
        let (hn_p, hn_c) = round_views(g, proj, cfg, other, round)?;
        let bp = base_score(sigmoid(dot(&h_p, &wz_p)), sigmoid(dot(&hn_p, &wz_p)));
        let bc = base_score(sigmoid(dot(&h_c, &wz_c)), sigmoid(dot(&hn_c, &wz_c)));
        if bp > 0.0 || bc > 0.0 {
            positive += 1;
        }
        b_p.push(bp);
        b_c.push(bc);
    }
    let sp = aggregate_rounds(&b_p)?;
    let sc = aggregate_rounds(&b_c)?;
    Ok(NodeReport {
        node,
        y: combine(sp.y, sc.y, cfg.alpha)?,
        y_p: sp.y,
        y_c: sc.y,
        mean_b_p: sp.mean,
        std_b_p: sp.std,
        mean_b_c: sc.mean,
        std_b_c: sc.std,
        positive_base_rounds: positive,
    })
}

/// Scores every node of `node_set` over `cfg.rounds` rounds. Work is spread
/// over the rayon pool; the report does not depend on the worker count.
pub fn score_all(
    g: &AttributedGraph,
    params: &ModelParams,
    node_set: &[usize],
    cfg: &ScoreConfig,
) -> Result<AnomalyReport> {
    if cfg.rounds == 0 || cfg.rounds > MAX_ROUNDS {
        return Err(Error::Argument(format!(
            "rounds must be in 1..={MAX_ROUNDS}, got {}",
            cfg.rounds
        )));
    }
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::Argument(format!("alpha {} outside [0, 1]", cfg.alpha)));
    }
    if g.num_nodes() < 2 {
        return Err(Error::Capacity("scoring needs at least two nodes".into()));
    }
    params.validate()?;
    if params.input_dim() != g.feature_dim() {
        return Err(Error::Shape(format!(
            "model expects {} features, graph has {}",
            params.input_dim(),
            g.feature_dim()
        )));
    }
    if let Some(&bad) = node_set.iter().find(|&&v| v >= g.num_nodes()) {
        return Err(Error::Range {
            id: bad,
            num_nodes: g.num_nodes(),
        });
    }
    let proj = Projected::new(g, params);
    let nodes = node_set
        .par_iter()
        .map(|&v| score_node(g, params, &proj, cfg, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnomalyReport {
        rounds: cfg.rounds,
        alpha: cfg.alpha,
        nodes,
    })
}
