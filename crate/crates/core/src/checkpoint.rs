//! Versioned JSON checkpoints of trained parameters.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrast::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, ModelParams};

pub const FORMAT: &str = "anemone-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub embed_dim: usize,
    /// SHA-256 of the serialized training config.
    pub config_hash: String,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn config_hash(cfg: &TrainConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

impl Checkpoint {
    pub fn new(config: TrainConfig, params: ModelParams, adam: AdamState, epoch_losses: Vec<f64>) -> Result<Self> {
        Ok(Self {
            format: FORMAT.to_string(),
            version: VERSION,
            input_dim: params.input_dim(),
            embed_dim: params.embed_dim(),
            config_hash: config_hash(&config)?,
            config,
            params,
            adam,
            epoch_losses,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    /// Header, shapes, hash, and finiteness checks.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                self.version
            )));
        }
        let (d, e) = (self.input_dim, self.embed_dim);
        let p = &self.params;
        let shapes = [p.theta.shape(), p.phi.shape(), p.w_p.shape(), p.w_c.shape()];
        if shapes != [(d, e), (d, e), (e, e), (e, e)] {
            return Err(Error::Checkpoint(format!(
                "parameter shapes {shapes:?} do not match {d}x{e}"
            )));
        }
        if config_hash(&self.config)? != self.config_hash {
            return Err(Error::Checkpoint("config hash mismatch".into()));
        }
        self.params
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid parameters: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample() -> Checkpoint {
        let mut r = rng::stream(3, &[1]);
        let params = ModelParams::glorot(3, 2, &mut r);
        let adam = AdamState::new(&params, 0.01);
        Checkpoint::new(TrainConfig::default(), params, adam, vec![0.7, 0.6]).unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn rejects_tampering() {
        let ck = sample();
        let mut bad = ck.clone();
        bad.version = 99;
        assert!(matches!(Checkpoint::from_json(&bad.to_json().unwrap()), Err(Error::Checkpoint(_))));
        let mut bad = ck.clone();
        bad.config.alpha = 0.3;
        assert!(matches!(Checkpoint::from_json(&bad.to_json().unwrap()), Err(Error::Checkpoint(_))));
        let mut bad = ck;
        bad.embed_dim = 5;
        assert!(matches!(Checkpoint::from_json(&bad.to_json().unwrap()), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_json("{").is_err());
    }
}
