//! Model construction from a corpus, mini-batch Adam training with early
//! stopping, and corpus-level prediction and evaluation.

mod adam;
mod checkpoint;
mod config;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use config::{ablate, Ablation, TrainConfig};

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Graph, ParamGrads, ParamId};
use crate::corpus::{collect_inventory, AnnotatedSentence, Entity, PredictionRecord, Relation};
use crate::embedding::{load_word_embeddings, CharVocabulary, Vocabulary, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::evalkit::{aggregate, evaluate_records, Averaging, EvalMode, EvalOptions, EvalReport};
use crate::model::{DecodeOptions, JointModel};
use crate::relhead::RelationLabelSet;
use crate::tagger::TagSet;

/// One row of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_entity_f1: f64,
    pub dev_relation_f1: f64,
    pub dev_overall_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The model from the best dev epoch, or the initial model when no
    /// epoch ran.
    pub model: JointModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Initialise a model whose vocabularies cover `train` (words, characters)
/// and `train` plus `dev` (entity types, relation labels).
pub fn build_model(config: &TrainConfig, train: &[AnnotatedSentence], dev: &[AnnotatedSentence]) -> Result<JointModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tokens = || train.iter().flat_map(|s| s.tokens.iter());
    let (vocab, table) = match &config.embeddings_path {
        Some(path) => {
            let (vocab, mut table) = load_word_embeddings(path, None, config.case_policy)?;
            table.trainable = config.train_word_embeddings;
            (vocab, table)
        }
        None => {
            let vocab = Vocabulary::from_words(tokens(), config.case_policy);
            let table = WordEmbeddingTable::random(vocab.len(), config.word_dim, &mut rng);
            (vocab, table)
        }
    };
    let chars = CharVocabulary::from_chars(tokens().flat_map(|t| t.chars()));
    let all: Vec<AnnotatedSentence> = train.iter().chain(dev).cloned().collect();
    let (mut types, mut labels) = collect_inventory(&all);
    types.sort();
    labels.sort();
    let tagset = TagSet::from_types(&types);
    let relations = RelationLabelSet::new(&labels);
    JointModel::new(config, vocab, table, chars, tagset, relations, &mut rng)
}

/// Build a model from `train` and fit it.
pub fn train(config: &TrainConfig, train: &[AnnotatedSentence], dev: &[AnnotatedSentence]) -> Result<TrainOutcome> {
    let model = build_model(config, train, dev)?;
    fit(model, train, dev, |_| {})
}

/// Loss and parameter gradients of one sentence.
fn sentence_grads(model: &JointModel, sentence: &AnnotatedSentence, mask_seed: Option<u64>) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::new(&model.store);
    let masks = mask_seed.map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.sample_masks(sentence.tokens.len(), &mut rng)
    });
    let loss = model.loss(&mut g, sentence, masks.as_ref())?;
    let value = g.scalar(loss);
    let grads = g.backward(loss)?.param_grads(&g);
    Ok((value, grads))
}

/// Mean loss and mean gradient over a batch. Sentences run in parallel;
/// the reduction follows batch order so results do not depend on thread
/// scheduling.
pub fn batch_grads(
    model: &JointModel,
    batch: &[&AnnotatedSentence],
    mask_seeds: Option<&[u64]>,
) -> Result<(f64, ParamGrads)> {
    let parts: Vec<Result<(f64, ParamGrads)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| sentence_grads(model, s, mask_seeds.map(|m| m[i])))
        .collect();
    let mut total = 0.0;
    let mut grads = ParamGrads::zeros_like(&model.store);
    for part in parts {
        let (loss, g) = part?;
        total += loss;
        grads.add(&g);
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((total * scale, grads))
}

/// Train until `max_epochs` or until `patience` epochs pass without a
/// strict improvement in dev overall F1. A tie with the best score still
/// replaces the retained model. `on_epoch` sees each history row.
pub fn fit(
    mut model: JointModel,
    train: &[AnnotatedSentence],
    dev: &[AnnotatedSentence],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Config("dev corpus is empty".into()));
    }
    model.check_inventory(train)?;
    model.check_inventory(dev)?;
    let config = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut adam = Adam::new(config.learning_rate);
    let mut best = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut since_improvement = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&AnnotatedSentence> = chunk.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
            let (loss, mut grads) = batch_grads(&model, &batch, Some(&seeds))?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(&mut model.store, &grads);
        }
        let report = evaluate_model(&model, dev, EvalMode::Strict, Averaging::Micro)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            dev_entity_f1: report.entities.scores.f1,
            dev_relation_f1: report.relations.scores.f1,
            dev_overall_f1: report.overall_f1,
        };
        on_epoch(&record);
        history.push(record);
        if report.overall_f1 >= best_f1 {
            best = model.clone();
            best_epoch = Some(epoch);
            if report.overall_f1 > best_f1 {
                since_improvement = 0;
            } else {
                since_improvement += 1;
            }
            best_f1 = report.overall_f1;
        } else {
            since_improvement += 1;
        }
        if since_improvement >= config.patience.max(1) {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
    })
}

/// Predict every sentence; records keep their gold annotations.
pub fn predict_corpus(model: &JointModel, corpus: &[AnnotatedSentence], opts: &DecodeOptions) -> Result<Vec<PredictionRecord>> {
    model.check_inventory(corpus)?;
    corpus
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.tokens, Some(&s.entities), opts)?;
            Ok(PredictionRecord {
                gold: s.clone(),
                pred_entities: p.entities,
                pred_relations: p.relations,
                pred_tags: Some(p.tags),
            })
        })
        .collect()
}

/// Predict with the model's own decoding settings and score the result.
pub fn evaluate_model(
    model: &JointModel,
    corpus: &[AnnotatedSentence],
    mode: EvalMode,
    averaging: Averaging,
) -> Result<EvalReport> {
    let records = predict_corpus(model, corpus, &DecodeOptions::from_config(&model.config))?;
    let opts = EvalOptions {
        mode,
        excluded_entity_classes: Vec::new(),
    };
    Ok(aggregate(&evaluate_records(&records, &opts)?, averaging))
}

/// Which loss a gradient check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossPart {
    Ner,
    Rel,
    Joint,
}

impl std::fmt::Display for LossPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossPart::Ner => "L_NER",
            LossPart::Rel => "L_rel",
            LossPart::Joint => "L_NER + L_rel",
        })
    }
}

/// The three-token sentence used by [`gradient_check`]: two entity types
/// (five tags) and two relation labels besides `N`.
pub fn gradient_check_sentence() -> AnnotatedSentence {
    AnnotatedSentence {
        tokens: vec!["Ann".into(), "met".into(), "Bo".into()],
        entities: vec![Entity::new(0, 0, "PER"), Entity::new(2, 2, "LOC")],
        relations: vec![Relation::new(0, 1, "Lives_in")],
    }
}

/// Finite-difference check of every parameter group of a small joint model
/// on [`gradient_check_sentence`], for each loss part. All parameters,
/// including biases and transitions, are drawn at random from `seed`.
pub fn gradient_check(seed: u64, opts: &GradCheckOptions) -> Result<Vec<(LossPart, GradCheckReport)>> {
    let sentence = gradient_check_sentence();
    let config = TrainConfig {
        lstm_size: 3,
        layer_width: 3,
        word_dim: 3,
        char_dim: 2,
        char_hidden: 2,
        label_dim: 2,
        seed,
        ..TrainConfig::default()
    };
    let train = [sentence.clone()];
    let mut other = sentence.clone();
    other.relations = vec![Relation::new(1, 0, "Works_for")];
    let mut model = build_model(&config, &train, &[other])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = model.store.ids().collect();
    for &id in &ids {
        model
            .store
            .get_mut(id)
            .value
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-0.5..0.5));
    }
    [LossPart::Ner, LossPart::Rel, LossPart::Joint]
        .into_iter()
        .map(|part| {
            let report = grad_check(
                &model.store,
                &ids,
                |g| {
                    let (ner, rel) = model.loss_parts(g, &sentence, None)?;
                    match part {
                        LossPart::Ner => Ok(ner),
                        LossPart::Rel => Ok(rel),
                        LossPart::Joint => g.add(ner, rel),
                    }
                },
                opts,
            )?;
            Ok((part, report))
        })
        .collect()
}
