//! Multi-scale contrastive anomaly detection on attributed graphs.

pub mod checkpoint;
pub mod config;
pub mod contrast;
pub mod error;
pub mod eval;
pub mod graph;
pub mod inject;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod scorer;

pub use error::{Error, Result};
pub use graph::AttributedGraph;
pub use linalg::Matrix;
