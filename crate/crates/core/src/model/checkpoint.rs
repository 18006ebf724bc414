//! Versioned JSON container for trained parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EdgeVocabulary, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::graph::EdgeKey;

pub const CHECKPOINT_FORMAT: &str = "gamechurn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    /// Completed training epochs.
    pub epochs: usize,
    pub params: ModelParams,
    /// Context edges in row order of `params.context_table`.
    pub vocabulary: Vec<EdgeKey>,
}

impl Checkpoint {
    pub fn new(seed: u64, config: ModelConfig, epochs: usize, params: ModelParams, vocabulary: &EdgeVocabulary) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed,
            config,
            epochs,
            params,
            vocabulary: vocabulary.edges().to_vec(),
        }
    }

    pub fn vocabulary(&self) -> EdgeVocabulary {
        self.vocabulary.iter().copied().collect()
    }

    /// Checks that every tensor has the shape its neighbours imply.
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a checkpoint: format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", self.version)));
        }
        let p = &self.params;
        if p.embed.is_empty() || p.pred.is_empty() {
            return Err(Error::Data("checkpoint has no layers".into()));
        }
        let mut width = p.embed[0].inputs;
        for l in p.embed.iter().chain(&p.pred) {
            if l.inputs != width || l.inputs == 0 || l.weights.len() != l.inputs * l.outputs() || l.outputs() == 0 {
                return Err(Error::Data("checkpoint layer shapes are inconsistent".into()));
            }
            width = l.outputs();
        }
        if p.sigmoid_weight.len() != width {
            return Err(Error::Data("checkpoint sigmoid weight has the wrong length".into()));
        }
        if p.context_table.len() != self.vocabulary.len() * p.embedding_dim() {
            return Err(Error::Data("checkpoint context table does not match its vocabulary".into()));
        }
        if self.vocabulary().len() != self.vocabulary.len() {
            return Err(Error::Data("checkpoint vocabulary has duplicate edges".into()));
        }
        if !p.is_finite() {
            return Err(Error::Data("checkpoint contains non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(raw).map_err(|e| Error::Data(format!("bad checkpoint: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw).map_err(|e| match e {
            Error::Data(m) => Error::parse(path, m),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig { embed_layers: vec![4, 3], pred_layers: vec![2], context_init_std: 0.01 };
        let vocab: EdgeVocabulary = [EdgeKey::new(0, 1), EdgeKey::new(2, 0)].into_iter().collect();
        let params = ModelParams::init(&cfg, 5, vocab.len(), &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        Checkpoint::new(17, cfg, 3, params, &vocab)
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let c = sample();
        let back = Checkpoint::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.params.tensors().iter().zip(c.params.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.json");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut c = sample();
        c.params.sigmoid_weight.push(0.0);
        assert!(Checkpoint::from_json(&c.to_json()).is_err());
        let mut c = sample();
        c.vocabulary.pop();
        assert!(Checkpoint::from_json(&c.to_json()).is_err());
        let mut c = sample();
        c.version = 99;
        assert!(Checkpoint::from_json(&c.to_json()).is_err());
    }
}
