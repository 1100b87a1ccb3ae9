use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arborescence::RootPolicy;
use crate::embedding::CasePolicy;
use crate::error::{Error, Result};
use crate::tagger::Activation;

/// Every knob of model construction, training and decoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lstm_size: usize,
    pub lstm_layers: usize,
    pub layer_width: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub label_dim: usize,
    pub dropout_embedding: f64,
    pub dropout_lstm: f64,
    pub dropout_lstm_output: f64,
    pub activation: Activation,
    pub threshold: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub use_char_embeddings: bool,
    pub use_label_embeddings: bool,
    pub use_crf: bool,
    pub single_head: bool,
    pub ec_mode: bool,
    pub enforce_tree: bool,
    pub root_policy: RootPolicy,
    pub train_word_embeddings: bool,
    pub embeddings_path: Option<PathBuf>,
    pub case_policy: CasePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lstm_size: 64,
            lstm_layers: 1,
            layer_width: 64,
            word_dim: 50,
            char_dim: 25,
            char_hidden: 25,
            label_dim: 25,
            dropout_embedding: 0.3,
            dropout_lstm: 0.2,
            dropout_lstm_output: 0.2,
            activation: Activation::Tanh,
            threshold: 0.5,
            max_epochs: 200,
            patience: 100,
            batch_size: 32,
            clip_norm: 5.0,
            seed: 0,
            use_char_embeddings: true,
            use_label_embeddings: true,
            use_crf: true,
            single_head: false,
            ec_mode: false,
            enforce_tree: false,
            root_policy: RootPolicy::NoRelationScore,
            train_word_embeddings: true,
            embeddings_path: None,
            case_policy: CasePolicy::LowercaseFallback,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Components that can be switched off one at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    LabelEmbeddings,
    CharacterEmbeddings,
    CrfLoss,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label_embeddings" => Ok(Ablation::LabelEmbeddings),
            "character_embeddings" => Ok(Ablation::CharacterEmbeddings),
            "crf_loss" => Ok(Ablation::CrfLoss),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

impl TrainConfig {
    /// Set one field from its textual form, using the field name as key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "lstm_size" => self.lstm_size = parse(key, v)?,
            "lstm_layers" => self.lstm_layers = parse(key, v)?,
            "layer_width" => self.layer_width = parse(key, v)?,
            "word_dim" => self.word_dim = parse(key, v)?,
            "char_dim" => self.char_dim = parse(key, v)?,
            "char_hidden" => self.char_hidden = parse(key, v)?,
            "label_dim" => self.label_dim = parse(key, v)?,
            "dropout_embedding" => self.dropout_embedding = parse(key, v)?,
            "dropout_lstm" => self.dropout_lstm = parse(key, v)?,
            "dropout_lstm_output" => self.dropout_lstm_output = parse(key, v)?,
            "activation" => self.activation = v.parse()?,
            "threshold" => self.threshold = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "use_char_embeddings" => self.use_char_embeddings = parse(key, v)?,
            "use_label_embeddings" => self.use_label_embeddings = parse(key, v)?,
            "use_crf" => self.use_crf = parse(key, v)?,
            "single_head" => self.single_head = parse(key, v)?,
            "ec_mode" => self.ec_mode = parse(key, v)?,
            "enforce_tree" => self.enforce_tree = parse(key, v)?,
            "root_policy" => {
                self.root_policy = match v {
                    "no_relation_score" => RootPolicy::NoRelationScore,
                    ty if !ty.is_empty() => RootPolicy::EntityType(ty.to_string()),
                    _ => return Err(Error::Config("empty root_policy".into())),
                }
            }
            "train_word_embeddings" => self.train_word_embeddings = parse(key, v)?,
            "embeddings_path" => {
                self.embeddings_path = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            "case_policy" => self.case_policy = v.parse()?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("dropout_embedding", self.dropout_embedding),
            ("dropout_lstm", self.dropout_lstm),
            ("dropout_lstm_output", self.dropout_lstm_output),
        ];
        for (name, r) in rates {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {r}")));
            }
        }
        let mut dims = vec![
            ("lstm_size", self.lstm_size),
            ("lstm_layers", self.lstm_layers),
            ("layer_width", self.layer_width),
            ("word_dim", self.word_dim),
            ("batch_size", self.batch_size),
        ];
        if self.use_char_embeddings {
            dims.push(("char_dim", self.char_dim));
            dims.push(("char_hidden", self.char_hidden));
        }
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {}", self.threshold)));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        Ok(())
    }

    /// Label embeddings are active only when enabled with a positive width.
    pub fn label_embeddings_active(&self) -> bool {
        self.use_label_embeddings && self.label_dim > 0
    }

    /// The CRF is used for training and decoding unless disabled; entity
    /// classification over given boundaries always decodes per token.
    pub fn crf_active(&self) -> bool {
        self.use_crf && !self.ec_mode
    }
}

/// The configuration with one component disabled and everything else kept.
pub fn ablate(config: &TrainConfig, flag: &str) -> Result<TrainConfig> {
    let mut c = config.clone();
    match flag.parse::<Ablation>()? {
        Ablation::LabelEmbeddings => c.use_label_embeddings = false,
        Ablation::CharacterEmbeddings => c.use_char_embeddings = false,
        Ablation::CrfLoss => c.use_crf = false,
    }
    Ok(c)
}
