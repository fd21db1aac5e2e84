use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anemone::checkpoint::Checkpoint;
use anemone::config::PipelineConfig;
use anemone::error::{Error, Result};
use anemone::eval::kshot_split;
use anemone::pipeline::{self, RunPaths};
use anemone::scorer::read_score_csv;

#[derive(Parser)]
#[command(name = "anemone", version, about = "Contrastive anomaly detection on attributed graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inject structural and contextual anomalies into a clean graph.
    Inject {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        inject: InjectArgs,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score nodes with a trained checkpoint.
    Score {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        score: ScoreArgs,
        /// Checkpoint to load [default: OUT/checkpoints/model.json].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compute AUC-ROC of a score file against labels.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Score file [default: OUT/scores/scores.csv].
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Inject, train, score, and evaluate, over one or more runs.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        inject: InjectArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        score: ScoreArgs,
        /// Number of runs; run r uses seed + r.
        #[arg(long)]
        runs: Option<usize>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long)]
    cliques: Option<usize>,
    #[arg(long)]
    clique_size: Option<usize>,
    #[arg(long)]
    contextual: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Nodes per sampled subgraph.
    #[arg(long, visible_alias = "k")]
    subgraph_size: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    restart_prob: Option<f64>,
    /// Train with this many labeled anomalies.
    #[arg(long)]
    few_shot: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    rounds: Option<usize>,
}

fn base_config(common: &CommonArgs) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.edges, &common.edges),
        (&mut paths.features, &common.features),
        (&mut paths.labels, &common.labels),
        (&mut paths.out, &common.out),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_inject(cfg: &mut PipelineConfig, a: &InjectArgs) {
    let i = &mut cfg.inject;
    i.cliques = a.cliques.unwrap_or(i.cliques);
    i.clique_size = a.clique_size.unwrap_or(i.clique_size);
    i.contextual = a.contextual.unwrap_or(i.contextual);
    i.candidates = a.candidates.unwrap_or(i.candidates);
}

fn apply_train(cfg: &mut PipelineConfig, a: &TrainArgs) {
    let t = &mut cfg.train;
    t.alpha = a.alpha.unwrap_or(t.alpha);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.subgraph_size = a.subgraph_size.unwrap_or(t.subgraph_size);
    t.dim = a.dim.unwrap_or(t.dim);
    t.lr = a.lr.unwrap_or(t.lr);
    t.restart_prob = a.restart_prob.unwrap_or(t.restart_prob);
    cfg.eval.few_shot = a.few_shot.unwrap_or(cfg.eval.few_shot);
}

fn cmd_inject(common: CommonArgs, args: InjectArgs) -> Result<()> {
    let mut cfg = base_config(&common)?;
    apply_inject(&mut cfg, &args);
    let g = pipeline::load_graph(&cfg)?;
    let paths = RunPaths::single(&cfg.out_dir());
    let inj = pipeline::inject_stage(&g, &cfg, cfg.seed, &paths)?;
    let structural: usize = inj.structural_groups.iter().map(Vec::len).sum();
    println!(
        "injected {} anomalies ({} structural in {} cliques, {} contextual)",
        inj.anomaly_ids().len(),
        structural,
        inj.structural_groups.len(),
        inj.contextual.len()
    );
    println!("wrote {}", paths.manifest.display());
    Ok(())
}

fn cmd_train(common: CommonArgs, args: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&common)?;
    apply_train(&mut cfg, &args);
    let g = pipeline::load_graph(&cfg)?;
    let labeled = if cfg.eval.few_shot > 0 {
        let labels = g
            .labels()
            .ok_or_else(|| Error::Config("--few-shot needs a label file (--labels)".into()))?;
        kshot_split(labels, cfg.eval.few_shot, cfg.seed)?.labeled
    } else {
        Vec::new()
    };
    let paths = RunPaths::single(&cfg.out_dir());
    let ck = pipeline::train_stage(&g, &cfg, cfg.seed, labeled, &paths.checkpoint, &paths.loss)?;
    if let Some(last) = ck.epoch_losses.last() {
        println!("final epoch loss {last:.6}");
    }
    println!("wrote {}", paths.checkpoint.display());
    Ok(())
}

fn cmd_score(common: CommonArgs, args: ScoreArgs, checkpoint: Option<PathBuf>) -> Result<()> {
    let mut cfg = base_config(&common)?;
    let paths = RunPaths::single(&cfg.out_dir());
    let ck = Checkpoint::load(&checkpoint.unwrap_or(paths.checkpoint.clone()))?;
    // view sampling follows the checkpoint unless the config file says otherwise
    if common.config.is_none() {
        cfg.train.alpha = ck.config.alpha;
        cfg.train.subgraph_size = ck.config.subgraph_size;
        cfg.train.restart_prob = ck.config.restart_prob;
    }
    cfg.score.rounds = args.rounds.unwrap_or(cfg.score.rounds);
    let g = pipeline::load_graph(&cfg)?;
    let report = pipeline::score_stage(&g, &cfg, cfg.seed, &ck, &paths.scores)?;
    println!(
        "scored {} nodes over {} rounds ({} rounds with a positive base score)",
        report.nodes.len(),
        report.rounds,
        report.positive_base_rounds()
    );
    println!("wrote {}", paths.scores.display());
    Ok(())
}

fn cmd_eval(common: CommonArgs, scores: Option<PathBuf>) -> Result<()> {
    let cfg = base_config(&common)?;
    let paths = RunPaths::single(&cfg.out_dir());
    let label_path = cfg
        .paths
        .labels
        .as_deref()
        .ok_or_else(|| Error::Config("eval needs a label file (--labels)".into()))?;
    let text = std::fs::read_to_string(label_path).map_err(|e| Error::Io {
        path: label_path.to_path_buf(),
        source: e,
    })?;
    let labels = anemone::graph::parse_labels(label_path, &text)?;
    let pairs = read_score_csv(&scores.unwrap_or(paths.scores.clone()))?;
    let curve = pipeline::eval_stage(&pairs, &labels, &paths.roc_csv, &paths.roc_json)?;
    println!("{:.6}", curve.auc);
    Ok(())
}

fn cmd_run(common: CommonArgs, inject: InjectArgs, train: TrainArgs, score: ScoreArgs, runs: Option<usize>) -> Result<()> {
    let mut cfg = base_config(&common)?;
    apply_inject(&mut cfg, &inject);
    apply_train(&mut cfg, &train);
    cfg.score.rounds = score.rounds.unwrap_or(cfg.score.rounds);
    cfg.eval.runs = runs.unwrap_or(cfg.eval.runs);
    let summary = pipeline::multi_run(&cfg)?;
    for r in &summary.runs {
        println!("run {} (seed {}): auc {:.6}", r.run, r.seed, r.auc);
    }
    println!("mean auc {:.6} over {} runs", summary.mean_auc, summary.runs.len());
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("ANEMONE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("ANEMONE_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Inject { common, inject } => cmd_inject(common, inject),
        Command::Train { common, train } => cmd_train(common, train),
        Command::Score { common, score, checkpoint } => cmd_score(common, score, checkpoint),
        Command::Eval { common, scores } => cmd_eval(common, scores),
        Command::Run {
            common,
            inject,
            train,
            score,
            runs,
        } => cmd_run(common, inject, train, score, runs),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
