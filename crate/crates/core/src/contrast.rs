//! Patch-level (node vs node) and context-level (node vs subgraph)
//! contrastive networks, in-batch negatives, the few-shot self-negative
//! route for labeled anomalies, the training objective, and the training
//! loop.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{induced_adjacency, AttributedGraph, NormalizedAdjacency};
use crate::linalg::sparse_row;
use crate::nn::{
    self, adam_step, bilinear_logit, clamp_score, sigmoid, AdamState, BatchTape, ModelParams,
    NodeTape, PairRole, PairTerm, Pooling, SampleTape, Scale, ViewTape,
};
use crate::rng::{self, tag};
use crate::sampler::{rwr_nodes, Subgraph, DEFAULT_RESTART_PROB};

pub const ALPHA_GRID: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Unsupervised,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub subgraph_size: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub restart_prob: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Labeled anomalies; used only in few-shot mode.
    pub labeled_ids: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            batch_size: 300,
            epochs: 100,
            subgraph_size: 4,
            embed_dim: 64,
            learning_rate: 0.001,
            restart_prob: DEFAULT_RESTART_PROB,
            seed: 0,
            mode: TrainMode::Unsupervised,
            labeled_ids: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Argument(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.batch_size == 0 || self.subgraph_size == 0 || self.embed_dim == 0 {
            return Err(Error::Argument(
                "batch size, subgraph size and embedding dimension must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.restart_prob > 0.0 && self.restart_prob < 1.0) {
            return Err(Error::Argument(format!(
                "restart probability {} outside (0, 1)",
                self.restart_prob
            )));
        }
        if let Some(&bad) = self.labeled_ids.iter().find(|&&v| v >= num_nodes) {
            return Err(Error::Range { id: bad, num_nodes });
        }
        if self.mode == TrainMode::FewShot && self.labeled_ids.is_empty() {
            return Err(Error::Argument("few-shot mode needs at least one labeled anomaly".into()));
        }
        Ok(())
    }
}

/// Contrastive scores of one batch member. Cross-pair scores are always
/// computed; `self_negative` holds the few-shot self-pair scores
/// `(s̃_p_self, s̃_c_self)` of labeled anomalies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeScores {
    pub node: usize,
    pub s_p: f64,
    pub s_neg_p: f64,
    pub s_c: f64,
    pub s_neg_c: f64,
    pub self_negative: Option<(f64, f64)>,
}

impl NodeScores {
    pub fn is_labeled(&self) -> bool {
        self.self_negative.is_some()
    }
}

pub type ContrastScores = Vec<NodeScores>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub patch: f64,
    pub context: f64,
    pub total: f64,
}

impl LossParts {
    fn mix(patch: f64, context: f64, alpha: f64) -> Self {
        Self {
            patch,
            context,
            total: alpha * context + (1.0 - alpha) * patch,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Argument(format!("alpha {alpha} outside [0, 1]")))
    }
}

fn check_scores(scores: &[NodeScores]) -> Result<()> {
    let ok = |s: f64| s > 0.0 && s < 1.0;
    for n in scores {
        let self_ok = n.self_negative.is_none_or(|(a, b)| ok(a) && ok(b));
        if !(ok(n.s_p) && ok(n.s_neg_p) && ok(n.s_c) && ok(n.s_neg_c) && self_ok) {
            return Err(Error::Numeric(format!("score of node {} outside (0, 1)", n.node)));
        }
    }
    Ok(())
}

#[inline]
fn ln(s: f64) -> f64 {
    clamp_score(s).ln()
}

#[inline]
fn ln1m(s: f64) -> f64 {
    (1.0 - clamp_score(s)).ln()
}

/// `L = α·L_c + (1-α)·L_p`, each scale `-(1/2B) Σ [ln s + ln(1 - s̃)]`.
pub fn loss_unsupervised(scores: &[NodeScores], alpha: f64) -> Result<LossParts> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::Batch("empty batch".into()));
    }
    check_scores(scores)?;
    let norm = -1.0 / (2.0 * scores.len() as f64);
    let mut patch = 0.0;
    let mut context = 0.0;
    for n in scores {
        patch += ln(n.s_p) + ln1m(n.s_neg_p);
        context += ln(n.s_c) + ln1m(n.s_neg_c);
    }
    Ok(LossParts::mix(norm * patch, norm * context, alpha))
}

/// Few-shot objective: unlabeled members contribute the unsupervised terms,
/// labeled anomalies only `ln(1 - s̃_self)` at each scale; both scales are
/// normalized by `1/(2B)` over the whole batch.
pub fn loss_few_shot(scores: &[NodeScores], alpha: f64) -> Result<LossParts> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::Batch("empty batch".into()));
    }
    check_scores(scores)?;
    let norm = -1.0 / (2.0 * scores.len() as f64);
    let mut patch = 0.0;
    let mut context = 0.0;
    for n in scores {
        match n.self_negative {
            None => {
                patch += ln(n.s_p) + ln1m(n.s_neg_p);
                context += ln(n.s_c) + ln1m(n.s_neg_c);
            }
            Some((sp, sc)) => {
                patch += ln1m(sp);
                context += ln1m(sc);
            }
        }
    }
    Ok(LossParts::mix(norm * patch, norm * context, alpha))
}

/// In-batch negative partner of every member: the next member cyclically.
/// With `labeled` flags, partners skip labeled members; an unlabeled member
/// that is the only unlabeled one falls back to its plain cyclic successor.
pub fn negative_partners(batch_len: usize, labeled: Option<&[bool]>) -> Vec<usize> {
    (0..batch_len)
        .map(|i| {
            let next = (i + 1) % batch_len;
            let Some(flags) = labeled else { return next };
            (1..batch_len)
                .map(|d| (i + d) % batch_len)
                .find(|&j| !flags[j])
                .unwrap_or(next)
        })
        .collect()
}

fn encode_samples(
    patch_views: &[Subgraph],
    context_views: Option<&[Subgraph]>,
    raw: &[&[f64]],
    params: &ModelParams,
) -> Result<Vec<SampleTape>> {
    (0..patch_views.len())
        .map(|i| {
            let ctx = match context_views {
                Some(c) => c[i].clone(),
                None => patch_views[i].clone(),
            };
            Ok(SampleTape {
                node: patch_views[i].target,
                patch: ViewTape::encode(patch_views[i].clone(), &params.theta, Pooling::Target)?,
                context: ViewTape::encode(ctx, &params.phi, Pooling::Mean)?,
                z_patch: NodeTape::encode(raw[i], &params.theta)?,
                z_context: NodeTape::encode(raw[i], &params.phi)?,
            })
        })
        .collect()
}

fn check_batch(views: &[Subgraph], raw: &[&[f64]]) -> Result<()> {
    if views.len() < 2 {
        return Err(Error::Batch(format!(
            "in-batch negatives need at least 2 members, got {}",
            views.len()
        )));
    }
    if views.len() != raw.len() {
        return Err(Error::Shape(format!(
            "{} views but {} feature rows",
            views.len(),
            raw.len()
        )));
    }
    Ok(())
}

fn pair_scores(samples: &[SampleTape], scale: Scale, w: &crate::linalg::Matrix) -> Result<Vec<(f64, f64)>> {
    let partners = negative_partners(samples.len(), None);
    samples
        .iter()
        .zip(&partners)
        .map(|(s, &j)| {
            let pos = nn::bilinear_score(s.h(scale), s.z(scale), w)?;
            let neg = nn::bilinear_score(samples[j].h(scale), s.z(scale), w)?;
            Ok((pos, neg))
        })
        .collect()
}

/// Patch-level `(s_p, s̃_p)` per batch member: the masked target embedding
/// (row 0 of the GCN over its anonymized view) against its own MLP
/// embedding, and the successor's masked embedding against it.
pub fn patch_scores(views: &[Subgraph], raw: &[&[f64]], params: &ModelParams) -> Result<Vec<(f64, f64)>> {
    check_batch(views, raw)?;
    let samples = encode_samples(views, None, raw, params)?;
    pair_scores(&samples, Scale::Patch, &params.w_p)
}

/// Context-level `(s_c, s̃_c)` per batch member: the average readout of the
/// view against the target's MLP embedding, with the successor's readout as
/// the negative.
pub fn context_scores(views: &[Subgraph], raw: &[&[f64]], params: &ModelParams) -> Result<Vec<(f64, f64)>> {
    check_batch(views, raw)?;
    let samples = encode_samples(views, Some(views), raw, params)?;
    pair_scores(&samples, Scale::Context, &params.w_c)
}

/// Self-pair negative scores `(s̃_p_self, s̃_c_self)` of labeled anomalies:
/// each node's own `(h, z)` pair, scored by the same discriminators.
pub fn fs_extra_negatives(
    mode: TrainMode,
    patch_views: &[Subgraph],
    context_views: &[Subgraph],
    raw: &[&[f64]],
    params: &ModelParams,
) -> Result<Vec<(f64, f64)>> {
    if mode != TrainMode::FewShot {
        return Err(Error::Mode("self-pair negatives exist only in few-shot mode".into()));
    }
    if patch_views.len() != context_views.len() || patch_views.len() != raw.len() {
        return Err(Error::Shape("mismatched labeled batch inputs".into()));
    }
    let samples = encode_samples(patch_views, Some(context_views), raw, params)?;
    samples
        .iter()
        .map(|s| {
            Ok((
                nn::bilinear_score(s.h(Scale::Patch), s.z(Scale::Patch), &params.w_p)?,
                nn::bilinear_score(s.h(Scale::Context), s.z(Scale::Context), &params.w_c)?,
            ))
        })
        .collect()
}

/// Result of one cached batch forward pass.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub scores: ContrastScores,
    pub loss: LossParts,
    pub tape: BatchTape,
}

/// Runs both encoders over a batch, builds every scored pair with its loss
/// weight, and evaluates the objective for `mode`. `labeled[i]` marks batch
/// member `i` as a labeled anomaly (ignored in unsupervised mode).
pub fn forward_batch(
    samples: Vec<SampleTape>,
    labeled: &[bool],
    params: &ModelParams,
    alpha: f64,
    mode: TrainMode,
) -> Result<BatchForward> {
    check_alpha(alpha)?;
    let b = samples.len();
    if b == 0 {
        return Err(Error::Batch("empty batch".into()));
    }
    let few_shot = mode == TrainMode::FewShot;
    if labeled.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labeled.len())));
    }
    let any_unlabeled = !few_shot || labeled.iter().any(|&l| !l);
    if any_unlabeled && b < 2 {
        return Err(Error::Batch("in-batch negatives need at least 2 members".into()));
    }
    let partners = negative_partners(b, few_shot.then_some(labeled));
    let norm = 1.0 / (2.0 * b as f64);
    let mut terms = Vec::with_capacity(4 * b);
    let mut scores = Vec::with_capacity(b);

    let logit = |scale: Scale, h_of: usize, z_of: usize| -> Result<f64> {
        let w = match scale {
            Scale::Patch => &params.w_p,
            Scale::Context => &params.w_c,
        };
        bilinear_logit(samples[h_of].h(scale), samples[z_of].z(scale), w)
    };

    for i in 0..b {
        let j = if b > 1 { partners[i] } else { i };
        let lp = logit(Scale::Patch, i, i)?;
        let lc = logit(Scale::Context, i, i)?;
        let ln_p = logit(Scale::Patch, j, i)?;
        let ln_c = logit(Scale::Context, j, i)?;
        let is_labeled = few_shot && labeled[i];
        let weights = [(Scale::Patch, (1.0 - alpha) * norm), (Scale::Context, alpha * norm)];
        if is_labeled {
            for ((scale, w), l) in weights.into_iter().zip([lp, lc]) {
                terms.push(PairTerm {
                    scale,
                    h_of: i,
                    z_of: i,
                    role: PairRole::Negative,
                    weight: w,
                    logit: l,
                });
            }
        } else {
            for ((scale, w), (pos, neg)) in weights.into_iter().zip([(lp, ln_p), (lc, ln_c)]) {
                terms.push(PairTerm {
                    scale,
                    h_of: i,
                    z_of: i,
                    role: PairRole::Positive,
                    weight: w,
                    logit: pos,
                });
                terms.push(PairTerm {
                    scale,
                    h_of: j,
                    z_of: i,
                    role: PairRole::Negative,
                    weight: w,
                    logit: neg,
                });
            }
        }
        let (s_p, s_c) = (sigmoid(lp), sigmoid(lc));
        scores.push(NodeScores {
            node: samples[i].node,
            s_p,
            s_neg_p: sigmoid(ln_p),
            s_c,
            s_neg_c: sigmoid(ln_c),
            self_negative: is_labeled.then_some((s_p, s_c)),
        });
    }
    let loss = match mode {
        TrainMode::Unsupervised => loss_unsupervised(&scores, alpha)?,
        TrainMode::FewShot => loss_few_shot(&scores, alpha)?,
    };
    Ok(BatchForward {
        scores,
        loss,
        tape: BatchTape { samples, terms },
    })
}

/// Nonzero entries of every node's feature row.
type SparseFeatures = Vec<Vec<(usize, f64)>>;

/// One RWR view as normalized adjacency plus sparse feature rows. Matches
/// [`rwr_sample`] draw for draw: the target row and padding rows are empty.
fn sparse_view(
    g: &AttributedGraph,
    sparse: &SparseFeatures,
    node: usize,
    cfg: &TrainConfig,
    rng: &mut rng::StreamRng,
) -> Result<(NormalizedAdjacency, Vec<Vec<(usize, f64)>>)> {
    let nodes = rwr_nodes(g, node, cfg.subgraph_size, cfg.restart_prob, rng)?;
    let adj = NormalizedAdjacency::from_binary(&induced_adjacency(g, &nodes)?)?;
    let rows = nodes
        .iter()
        .enumerate()
        .map(|(slot, &v)| {
            if slot == 0 || v == node {
                Vec::new()
            } else {
                sparse[v].clone()
            }
        })
        .collect();
    Ok((adj, rows))
}

/// Samples both anonymized views of `node` for training step `(epoch)` and
/// encodes them under `params`.
fn training_sample(
    g: &AttributedGraph,
    sparse: &SparseFeatures,
    node: usize,
    epoch: usize,
    cfg: &TrainConfig,
    params: &ModelParams,
) -> Result<SampleTape> {
    let key = |view: u64| [tag::TRAIN, view, epoch as u64, node as u64];
    let mut rp = rng::stream(cfg.seed, &key(tag::PATCH_VIEW));
    let mut rc = rng::stream(cfg.seed, &key(tag::CONTEXT_VIEW));
    let (patch_adj, patch_rows) = sparse_view(g, sparse, node, cfg, &mut rp)?;
    let (context_adj, context_rows) = sparse_view(g, sparse, node, cfg, &mut rc)?;
    Ok(SampleTape {
        node,
        patch: ViewTape::encode_sparse(patch_adj, patch_rows, &params.theta, Pooling::Target)?,
        context: ViewTape::encode_sparse(context_adj, context_rows, &params.phi, Pooling::Mean)?,
        z_patch: NodeTape::encode_sparse(sparse[node].clone(), &params.theta),
        z_context: NodeTape::encode_sparse(sparse[node].clone(), &params.phi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: LossParts,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub trace: Vec<LossRecord>,
}

impl TrainOutcome {
    /// Mean total loss of each epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.trace {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss.total;
            out[r.epoch].1 += 1;
        }
        out.into_iter()
            .filter(|(_, c)| *c > 0)
            .map(|(s, c)| s / c as f64)
            .collect()
    }

    /// Training log as CSV: `epoch,batch,loss_patch,loss_context,loss_total`.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,batch,loss_patch,loss_context,loss_total\n");
        for r in &self.trace {
            s.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e}\n",
                r.epoch, r.batch, r.loss.patch, r.loss.context, r.loss.total
            ));
        }
        s
    }
}

pub fn init_params(g: &AttributedGraph, cfg: &TrainConfig) -> ModelParams {
    let mut rng = rng::stream(cfg.seed, &[tag::TRAIN, tag::INIT]);
    ModelParams::glorot(g.feature_dim(), cfg.embed_dim, &mut rng)
}

/// Trains from Glorot-initialized parameters.
pub fn train(g: &AttributedGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(g, cfg, init_params(g, cfg))
}

/// Runs `cfg.epochs` epochs of mini-batch training from `params`. Each epoch
/// shuffles all nodes into batches of `cfg.batch_size` (the last one may be
/// shorter), samples two views per node, and takes one Adam step per batch.
/// Batches that cannot form an in-batch negative are skipped.
pub fn train_from(g: &AttributedGraph, cfg: &TrainConfig, mut params: ModelParams) -> Result<TrainOutcome> {
    cfg.validate(g.num_nodes())?;
    params.validate()?;
    if params.input_dim() != g.feature_dim() || params.embed_dim() != cfg.embed_dim {
        return Err(Error::Shape(format!(
            "parameters are {}x{}, graph/config need {}x{}",
            params.input_dim(),
            params.embed_dim(),
            g.feature_dim(),
            cfg.embed_dim
        )));
    }
    if !g.features().is_finite() {
        return Err(Error::Numeric("non-finite node features".into()));
    }
    let sparse: SparseFeatures = (0..g.num_nodes()).map(|v| sparse_row(g.feature_row(v))).collect();
    let few_shot = cfg.mode == TrainMode::FewShot;
    let labeled_set: HashSet<usize> = if few_shot {
        cfg.labeled_ids.iter().copied().collect()
    } else {
        HashSet::new()
    };
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..g.num_nodes()).collect();

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::stream(cfg.seed, &[tag::TRAIN, tag::SHUFFLE, epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let labeled: Vec<bool> = batch.iter().map(|v| labeled_set.contains(v)).collect();
            let unlabeled = labeled.iter().filter(|&&l| !l).count();
            if unlabeled > 0 && batch.len() < 2 {
                continue;
            }
            let wrap = |source: Error| Error::Training {
                epoch,
                batch: batch_idx,
                source: Box::new(source),
            };
            let samples: Vec<SampleTape> = batch
                .par_iter()
                .map(|&v| training_sample(g, &sparse, v, epoch, cfg, &params))
                .collect::<Result<_>>()
                .map_err(wrap)?;
            let fwd = forward_batch(samples, &labeled, &params, cfg.alpha, cfg.mode).map_err(wrap)?;
            let grads = nn::backward(Some(&fwd.tape), &params, 1.0).map_err(wrap)?;
            adam_step(&mut params, &grads, &mut adam).map_err(wrap)?;
            trace.push(LossRecord {
                epoch,
                batch: batch_idx,
                loss: fwd.loss,
            });
        }
    }
    Ok(TrainOutcome { params, adam, trace })
}
