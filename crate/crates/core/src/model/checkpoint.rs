use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DialogVed, ModelConfig};
use crate::numerics::Tensor;
use crate::text::Vocabulary;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// On-disk model: config, named parameters and optionally the vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    params: BTreeMap<String, StoredTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
}

impl Checkpoint {
    pub fn from_model(model: &DialogVed, vocab: Option<&Vocabulary>) -> Self {
        let params = model
            .params()
            .iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            config: model.config().clone(),
            params,
            vocab: vocab.map(|v| v.tokens().to_vec()),
        }
    }

    /// Rebuilds the model, checking every parameter against the stored config.
    pub fn to_model(&self) -> Result<DialogVed> {
        self.to_model_with(self.config.clone())
    }

    /// Loads the stored parameters into the architecture of `config`.
    pub fn to_model_with(&self, config: ModelConfig) -> Result<DialogVed> {
        let values = self
            .params
            .iter()
            .map(|(name, st)| {
                let t = Tensor::new(st.shape.clone(), st.data.clone())
                    .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
                Ok((name.clone(), t))
            })
            .collect::<Result<Vec<_>>>()?;
        DialogVed::from_parts(config, values)
    }

    pub fn vocabulary(&self) -> Result<Option<Vocabulary>> {
        self.vocab
            .as_ref()
            .map(|tokens| Vocabulary::from_token_list(tokens))
            .transpose()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

impl DialogVed {
    pub fn save(&self, path: &Path, vocab: Option<&Vocabulary>) -> Result<()> {
        Checkpoint::from_model(self, vocab).save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<Vocabulary>)> {
        let ck = Checkpoint::load(path)?;
        Ok((ck.to_model()?, ck.vocabulary()?))
    }
}
