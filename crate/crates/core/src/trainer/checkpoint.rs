use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::embedding::{CharVocabulary, Vocabulary, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::model::JointModel;
use crate::relhead::RelationLabelSet;
use crate::tagger::TagSet;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub trainable: bool,
    pub tensor: Tensor,
}

/// Everything needed to rebuild a model: configuration, vocabularies and
/// every parameter by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub words: Vec<String>,
    pub chars: Vec<char>,
    pub tags: Vec<String>,
    pub relation_labels: Vec<String>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &JointModel) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            words: model.embedder.vocab.words().to_vec(),
            chars: model
                .embedder
                .chars
                .as_ref()
                .map(|c| c.chars.chars().to_vec())
                .unwrap_or_default(),
            tags: model.tagset.tags().to_vec(),
            relation_labels: model.relations.labels().to_vec(),
            params: model
                .store
                .iter()
                .map(|(_, p)| NamedTensor {
                    name: p.name.clone(),
                    trainable: p.trainable,
                    tensor: p.value.clone(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<JointModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let vocab = Vocabulary::from_entries(&self.words, self.config.case_policy)?;
        let word_rows = self
            .params
            .iter()
            .find(|p| p.name == "words")
            .ok_or_else(|| Error::Checkpoint("missing word embeddings".into()))?;
        let table = WordEmbeddingTable {
            matrix: Tensor::zeros(word_rows.tensor.shape()),
            trainable: word_rows.trainable,
        };
        let chars = CharVocabulary::from_chars(self.chars.iter().copied());
        let tagset = TagSet::from_tags(self.tags.clone())?;
        let relations = RelationLabelSet::from_labels(&self.relation_labels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = JointModel::new(&self.config, vocab, table, chars, tagset, relations, &mut rng)?;
        if model.store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} parameters, checkpoint has {}",
                model.store.len(),
                self.params.len()
            )));
        }
        for named in &self.params {
            let id = model
                .store
                .find(&named.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {:?}", named.name)))?;
            model
                .store
                .set_value(id, named.tensor.clone())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", named.name)))?;
            model.store.get_mut(id).trainable = named.trainable;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut out, self)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
