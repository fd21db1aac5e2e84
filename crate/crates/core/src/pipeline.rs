//! End-to-end driver: inject, train, score, evaluate, and multi-run
//! aggregation, with a fixed output layout under the output directory:
//!
//! ```text
//! out/graph/        injected graphs and manifests
//! out/checkpoints/  trained parameters and loss logs
//! out/scores/       score files
//! out/eval/         ROC curves and metrics
//! out/summary.json  per-run AUC and the mean
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::PipelineConfig;
use crate::contrast::train;
use crate::error::{Error, Result};
use crate::eval::{kshot_split, mean_std, roc_points, RocCurve};
use crate::graph::AttributedGraph;
use crate::inject::{inject, Injection, InjectionManifest};
use crate::scorer::{score_all, AnomalyReport};

pub fn load_graph(cfg: &PipelineConfig) -> Result<AttributedGraph> {
    AttributedGraph::load(cfg.require_edges()?, cfg.require_features()?, cfg.paths.labels.as_deref())
}

pub(crate) fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Output file names for one run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub loss: PathBuf,
    pub scores: PathBuf,
    pub roc_csv: PathBuf,
    pub roc_json: PathBuf,
}

impl RunPaths {
    /// Run-indexed names used by multi-run pipelines.
    pub fn new(out: &Path, run: usize) -> Self {
        Self::with_prefix(out, &format!("run{run}_"))
    }

    /// Plain names used by the single-stage commands.
    pub fn single(out: &Path) -> Self {
        Self::with_prefix(out, "")
    }

    fn with_prefix(out: &Path, prefix: &str) -> Self {
        let f = |dir: &str, name: &str| out.join(dir).join(format!("{prefix}{name}"));
        Self {
            edges: f("graph", "edges.txt"),
            features: f("graph", "features.txt"),
            labels: f("graph", "labels.txt"),
            manifest: f("graph", "manifest.json"),
            checkpoint: f("checkpoints", "model.json"),
            loss: f("checkpoints", "loss.csv"),
            scores: f("scores", "scores.csv"),
            roc_csv: f("eval", "roc.csv"),
            roc_json: f("eval", "roc.json"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectRecord {
    pub config: PipelineConfig,
    pub manifest: InjectionManifest,
}

/// Injects anomalies and writes the graph files and manifest.
pub fn inject_stage(g: &AttributedGraph, cfg: &PipelineConfig, seed: u64, paths: &RunPaths) -> Result<Injection> {
    let spec = cfg.injection_spec(seed);
    let inj = inject(g, &spec)?;
    inj.graph.save(&paths.edges, &paths.features, Some(&paths.labels))?;
    write_json(
        &paths.manifest,
        &InjectRecord {
            config: cfg.clone(),
            manifest: inj.manifest(&spec),
        },
    )?;
    Ok(inj)
}

/// Trains on `g` and writes the checkpoint and loss log.
pub fn train_stage(
    g: &AttributedGraph,
    cfg: &PipelineConfig,
    seed: u64,
    labeled: Vec<usize>,
    checkpoint: &Path,
    loss: &Path,
) -> Result<Checkpoint> {
    let tc = cfg.train_config(seed, labeled);
    let outcome = train(g, &tc)?;
    write(loss, &outcome.loss_csv())?;
    let means = outcome.epoch_means();
    let ck = Checkpoint::new(tc, outcome.params, outcome.adam, means)?;
    write(checkpoint, &ck.to_json()?)?;
    Ok(ck)
}

/// Nodes a checkpoint should be scored on: everything in unsupervised
/// mode, everything but the labeled anomalies in few-shot mode.
pub fn scoring_nodes(num_nodes: usize, ck: &Checkpoint) -> Vec<usize> {
    let mut labeled = ck.config.labeled_ids.clone();
    labeled.sort_unstable();
    (0..num_nodes)
        .filter(|v| labeled.binary_search(v).is_err())
        .collect()
}

pub fn score_stage(
    g: &AttributedGraph,
    cfg: &PipelineConfig,
    seed: u64,
    ck: &Checkpoint,
    scores: &Path,
) -> Result<AnomalyReport> {
    let nodes = scoring_nodes(g.num_nodes(), ck);
    let report = score_all(g, &ck.params, &nodes, &cfg.score_config(seed))?;
    write(scores, &report.to_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSidecar {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub runs: Vec<f64>,
}

/// AUC of `(node, score)` pairs against `labels`, with the ROC curve
/// written as CSV plus a JSON sidecar.
pub fn eval_stage(scores: &[(usize, f64)], labels: &[u8], roc_csv: &Path, roc_json: &Path) -> Result<RocCurve> {
    let mut ys = Vec::with_capacity(scores.len());
    let mut ls = Vec::with_capacity(scores.len());
    for &(v, y) in scores {
        let l = *labels.get(v).ok_or(Error::Range {
            id: v,
            num_nodes: labels.len(),
        })?;
        ys.push(y);
        ls.push(l);
    }
    let curve = roc_points(&ys, &ls)?;
    write(roc_csv, &curve.to_csv())?;
    write_json(
        roc_json,
        &RocSidecar {
            auc: curve.auc,
            n_pos: curve.n_pos,
            n_neg: curve.n_neg,
            runs: vec![curve.auc],
        },
    )?;
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub auc: f64,
    pub num_scored: usize,
    pub labeled: Vec<usize>,
    pub positive_base_rounds: usize,
}

/// One full pipeline pass with seed `cfg.seed + run`.
pub fn run_once(g: &AttributedGraph, cfg: &PipelineConfig, run: usize) -> Result<RunResult> {
    let seed = cfg.seed.wrapping_add(run as u64);
    let paths = RunPaths::new(&cfg.out_dir(), run);
    let inj = inject_stage(g, cfg, seed, &paths)?;
    let labels = inj.graph.labels().expect("injection always labels").to_vec();
    let labeled = if cfg.eval.few_shot > 0 {
        kshot_split(&labels, cfg.eval.few_shot, seed)?.labeled
    } else {
        Vec::new()
    };
    let ck = train_stage(&inj.graph, cfg, seed, labeled.clone(), &paths.checkpoint, &paths.loss)?;
    let report = score_stage(&inj.graph, cfg, seed, &ck, &paths.scores)?;
    let pairs: Vec<(usize, f64)> = report.nodes.iter().map(|n| (n.node, n.y)).collect();
    let curve = eval_stage(&pairs, &labels, &paths.roc_csv, &paths.roc_json)?;
    Ok(RunResult {
        run,
        seed,
        auc: curve.auc,
        num_scored: pairs.len(),
        labeled,
        positive_base_rounds: report.positive_base_rounds(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: PipelineConfig,
    pub per_run_auc: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub runs: Vec<RunResult>,
}

/// Runs the pipeline `cfg.eval.runs` times with seeds `seed, seed+1, ...`
/// and writes `summary.json`.
pub fn multi_run(cfg: &PipelineConfig) -> Result<Summary> {
    if cfg.eval.runs == 0 {
        return Err(Error::Argument("runs must be at least 1".into()));
    }
    let g = load_graph(cfg)?;
    let runs = (0..cfg.eval.runs)
        .map(|r| run_once(&g, cfg, r))
        .collect::<Result<Vec<_>>>()?;
    let per_run_auc: Vec<f64> = runs.iter().map(|r| r.auc).collect();
    let (mean_auc, std_auc) = mean_std(&per_run_auc);
    let summary = Summary {
        config: cfg.clone(),
        per_run_auc,
        mean_auc,
        std_auc,
        runs,
    };
    write_json(&cfg.out_dir().join("summary.json"), &summary)?;
    Ok(summary)
}
