//! Pipeline configuration, read from a TOML file and overridable by flags.
//!
//! ```toml
//! seed = 1
//!
//! [paths]
//! edges = "data/cora/edges.txt"
//! features = "data/cora/features.txt"
//! # labels = "data/cora/labels.txt"
//! out = "out"
//!
//! [inject]
//! cliques = 5
//! clique_size = 15
//! contextual = 75
//! candidates = 50
//!
//! [train]
//! alpha = 0.8
//! batch_size = 300
//! epochs = 100
//! subgraph_size = 4
//! dim = 64
//! lr = 0.001
//! restart_prob = 0.5
//!
//! [score]
//! rounds = 256
//! # alpha = 0.8
//!
//! [eval]
//! runs = 5
//! few_shot = 0
//! ```
//!
//! Every key is optional. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrast::{TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::inject::InjectionSpec;
use crate::scorer::{ScoreConfig, DEFAULT_ROUNDS};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectConfig {
    pub cliques: usize,
    pub clique_size: usize,
    pub contextual: usize,
    pub candidates: usize,
}

impl Default for InjectConfig {
    fn default() -> Self {
        let d = InjectionSpec::default();
        Self {
            cliques: d.num_cliques,
            clique_size: d.clique_size,
            contextual: d.num_contextual,
            candidates: d.num_candidates,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub subgraph_size: usize,
    pub dim: usize,
    pub lr: f64,
    pub restart_prob: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            alpha: d.alpha,
            batch_size: d.batch_size,
            epochs: d.epochs,
            subgraph_size: d.subgraph_size,
            dim: d.embed_dim,
            lr: d.learning_rate,
            restart_prob: d.restart_prob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub rounds: usize,
    /// Overrides the training α for scoring when set.
    pub alpha: Option<f64>,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self {
            rounds: DEFAULT_ROUNDS,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub runs: usize,
    /// Number of labeled anomalies; 0 runs the unsupervised pipeline.
    pub few_shot: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { runs: 1, few_shot: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub inject: InjectConfig,
    pub train: TrainSection,
    pub score: ScoreSection,
    pub eval: EvalSection,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.edges,
            &mut cfg.paths.features,
            &mut cfg.paths.labels,
            &mut cfg.paths.out,
        ] {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn require_edges(&self) -> Result<&Path> {
        self.paths
            .edges
            .as_deref()
            .ok_or_else(|| Error::Config("no edge file given (--edges or [paths] edges)".into()))
    }

    pub fn require_features(&self) -> Result<&Path> {
        self.paths
            .features
            .as_deref()
            .ok_or_else(|| Error::Config("no feature file given (--features or [paths] features)".into()))
    }

    pub fn injection_spec(&self, seed: u64) -> InjectionSpec {
        InjectionSpec {
            num_cliques: self.inject.cliques,
            clique_size: self.inject.clique_size,
            num_contextual: self.inject.contextual,
            num_candidates: self.inject.candidates,
            seed,
        }
    }

    pub fn train_config(&self, seed: u64, labeled_ids: Vec<usize>) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            alpha: t.alpha,
            batch_size: t.batch_size,
            epochs: t.epochs,
            subgraph_size: t.subgraph_size,
            embed_dim: t.dim,
            learning_rate: t.lr,
            restart_prob: t.restart_prob,
            seed,
            mode: if labeled_ids.is_empty() {
                TrainMode::Unsupervised
            } else {
                TrainMode::FewShot
            },
            labeled_ids,
        }
    }

    pub fn score_config(&self, seed: u64) -> ScoreConfig {
        ScoreConfig {
            rounds: self.score.rounds,
            alpha: self.score.alpha.unwrap_or(self.train.alpha),
            subgraph_size: self.train.subgraph_size,
            restart_prob: self.train.restart_prob,
            seed,
        }
    }
}
