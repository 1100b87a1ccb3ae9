//! The full network: token embedding, BiLSTM encoder, BIO tagger, label
//! embeddings and the multi-head relation scorer.

use rand::Rng;

use crate::arborescence::{enforce_tree, RootPolicy};
use crate::autodiff::{sigmoid, Graph, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{bio_decode, bio_encode, relations_from_heads, to_head_targets, AnnotatedSentence, Entity, Relation};
use crate::embedding::{CharComposer, CharVocabulary, TokenEmbedder, Vocabulary, WordEmbeddingTable};
use crate::encoder::EncoderStack;
use crate::error::{Error, Result};
use crate::relhead::{
    joint_loss, rel_loss, single_head_decode, single_head_loss, threshold_decode, HeadTargets, RelScorer,
    RelationLabelSet,
};
use crate::tagger::{
    attach_labels, crf_nll, greedy_decode, softmax_tag_loss, split_tag, viterbi_decode, LabelEmbedding, NerScorer,
    TagSet,
};
use crate::trainer::TrainConfig;

/// Inverted-dropout masks for one sentence. `None` disables a site.
#[derive(Clone, Debug, Default)]
pub struct DropoutMasks {
    /// `n x input`, on the token vectors.
    pub embedding: Option<Tensor>,
    /// One per encoder layer boundary (`n x 2d`).
    pub between_layers: Vec<Option<Tensor>>,
    /// `n x 2d`, on the encoder output.
    pub output: Option<Tensor>,
}

fn mask<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, rate: f64) -> Option<Tensor> {
    (rate > 0.0).then(|| {
        let keep = 1.0 / (1.0 - rate);
        let data = (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        Tensor::matrix(rows, cols, data).expect("positive dims")
    })
}

/// Decoding switches that do not change the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    pub threshold: f64,
    pub enforce_tree: bool,
    pub root_policy: RootPolicy,
}

impl DecodeOptions {
    pub fn from_config(c: &TrainConfig) -> Self {
        DecodeOptions {
            threshold: c.threshold,
            enforce_tree: c.enforce_tree,
            root_policy: c.root_policy.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub tags: Vec<String>,
    pub entities: Vec<Entity>,
    /// Decoded `(head, label)` pairs per token.
    pub heads: Vec<Vec<(usize, usize)>>,
    pub relations: Vec<Relation>,
}

#[derive(Clone, Debug)]
pub struct JointModel {
    pub config: TrainConfig,
    pub tagset: TagSet,
    pub relations: RelationLabelSet,
    pub store: ParamStore,
    pub embedder: TokenEmbedder,
    pub encoder: EncoderStack,
    pub ner: NerScorer,
    pub transitions: Option<ParamId>,
    pub labels: Option<LabelEmbedding>,
    pub rel: RelScorer,
}

impl JointModel {
    /// Build every parameter. `config.word_dim` is replaced by the width of
    /// `words`.
    pub fn new<R: Rng + ?Sized>(
        config: &TrainConfig,
        vocab: Vocabulary,
        words: WordEmbeddingTable,
        chars: CharVocabulary,
        tagset: TagSet,
        relations: RelationLabelSet,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if words.matrix.rows() != vocab.len() {
            return Err(Error::VocabularyMismatch(format!(
                "{} words but {} embedding rows",
                vocab.len(),
                words.matrix.rows()
            )));
        }
        let mut config = config.clone();
        config.word_dim = words.dim();
        let mut store = ParamStore::new();
        let word_dim = words.dim();
        let word_id = store.add("words", words.matrix);
        store.get_mut(word_id).trainable = words.trainable;
        let char_composer = config
            .use_char_embeddings
            .then(|| CharComposer::new(&mut store, chars, config.char_dim, config.char_hidden, rng));
        let embedder = TokenEmbedder {
            vocab,
            words: word_id,
            word_dim,
            chars: char_composer,
        };
        let encoder = EncoderStack::new(&mut store, embedder.output_size(), config.lstm_size, config.lstm_layers, rng);
        let p = tagset.len();
        let ner = NerScorer::new(&mut store, encoder.output_size(), config.layer_width, p, config.activation, rng);
        let transitions = config
            .crf_active()
            .then(|| store.add("crf.transitions", Tensor::zeros(&[p + 2, p + 2])));
        let labels = config
            .label_embeddings_active()
            .then(|| LabelEmbedding::new(&mut store, p, config.label_dim, rng));
        let z_dim = encoder.output_size() + labels.as_ref().map_or(0, |l| l.dim);
        let rel = RelScorer::new(&mut store, z_dim, config.layer_width, relations.len(), config.activation, rng);
        Ok(JointModel {
            config,
            tagset,
            relations,
            store,
            embedder,
            encoder,
            ner,
            transitions,
            labels,
            rel,
        })
    }

    /// Fresh dropout masks for an `n`-token sentence using the configured
    /// rates.
    pub fn sample_masks<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DropoutMasks {
        let c = &self.config;
        let d2 = self.encoder.output_size();
        DropoutMasks {
            embedding: mask(rng, n, self.embedder.output_size(), c.dropout_embedding),
            between_layers: (1..self.encoder.layers.len())
                .map(|_| mask(rng, n, d2, c.dropout_lstm))
                .collect(),
            output: mask(rng, n, d2, c.dropout_lstm_output),
        }
    }

    /// Encoder output `h` (`n x 2d`).
    pub fn encode(&self, g: &mut Graph<'_>, tokens: &[String], masks: Option<&DropoutMasks>) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::InvalidTensor("empty sentence".into()));
        }
        let rows = tokens
            .iter()
            .map(|t| self.embedder.compose_token(g, t))
            .collect::<Result<Vec<_>>>()?;
        let mut x = g.concat(&rows, 0)?;
        if let Some(m) = masks.and_then(|m| m.embedding.as_ref()) {
            x = g.dropout_mask_apply(x, m)?;
        }
        let layer_masks = masks.map_or(&[][..], |m| m.between_layers.as_slice());
        let mut h = self.encoder.encode(g, &[x], layer_masks)?;
        if let Some(m) = masks.and_then(|m| m.output.as_ref()) {
            h = g.dropout_mask_apply(h, m)?;
        }
        Ok(h)
    }

    /// Gold tag indices and head targets for a sentence. In single-head
    /// mode each token keeps only its first gold pair.
    pub fn targets(&self, sentence: &AnnotatedSentence) -> Result<(Vec<usize>, HeadTargets)> {
        let tags = self.tagset.encode(&bio_encode(sentence))?;
        let mut heads = to_head_targets(sentence, &self.relations)?;
        if self.config.single_head {
            heads.heads.iter_mut().for_each(|h| h.truncate(1));
        }
        Ok((tags, heads))
    }

    /// `L_NER + L_rel` for one annotated sentence. Label embeddings use the
    /// gold tags.
    pub fn loss(&self, g: &mut Graph<'_>, sentence: &AnnotatedSentence, masks: Option<&DropoutMasks>) -> Result<Var> {
        let (ner, rel) = self.loss_parts(g, sentence, masks)?;
        joint_loss(g, ner, rel)
    }

    /// `(L_NER, L_rel)` for one annotated sentence.
    pub fn loss_parts(
        &self,
        g: &mut Graph<'_>,
        sentence: &AnnotatedSentence,
        masks: Option<&DropoutMasks>,
    ) -> Result<(Var, Var)> {
        let (tags, targets) = self.targets(sentence)?;
        let h = self.encode(g, &sentence.tokens, masks)?;
        let scores = self.ner.scores(g, h)?;
        let ner = match self.transitions {
            Some(t) => {
                let trans = g.param(t);
                crf_nll(g, scores, trans, &tags)?
            }
            None => softmax_tag_loss(g, scores, &tags)?,
        };
        let z = attach_labels(g, h, &tags, self.labels.as_ref())?;
        let s = self.rel.pair_scores(g, z)?;
        let rel = if self.config.single_head {
            single_head_loss(g, s, &targets)?
        } else {
            rel_loss(g, s, &targets)?
        };
        Ok((ner, rel))
    }

    /// Tag ids and entities. With `given` spans (entity classification),
    /// tokens inside a span take their best non-`O` tag and the span takes
    /// the majority type, ties going to the type seen first.
    fn decode_entities(&self, scores: &Tensor, given: Option<&[Entity]>) -> (Vec<usize>, Vec<Entity>) {
        match given {
            None => {
                let ids = match self.transitions {
                    Some(t) => viterbi_decode(scores, self.store.value(t)).0,
                    None => greedy_decode(scores),
                };
                let entities = bio_decode(&self.tagset.decode(&ids));
                (ids, entities)
            }
            Some(spans) => {
                let outside = self.tagset.outside();
                let mut ids = vec![outside; scores.rows()];
                let mut entities = Vec::with_capacity(spans.len());
                for e in spans {
                    let mut votes: Vec<(String, usize)> = Vec::new();
                    for (i, id) in ids.iter_mut().enumerate().take(e.end + 1).skip(e.start) {
                        let row = scores.row_slice(i);
                        let mut best: Option<usize> = None;
                        for (k, &s) in row.iter().enumerate() {
                            if k != outside && best.is_none_or(|b| s > row[b]) {
                                best = Some(k);
                            }
                        }
                        *id = best.unwrap_or(outside);
                        if let Some((_, ty)) = split_tag(self.tagset.tag(*id)) {
                            match votes.iter_mut().find(|(t, _)| t == ty) {
                                Some((_, c)) => *c += 1,
                                None => votes.push((ty.to_string(), 1)),
                            }
                        }
                    }
                    let mut winner: Option<&(String, usize)> = None;
                    for v in &votes {
                        if winner.is_none_or(|w| v.1 > w.1) {
                            winner = Some(v);
                        }
                    }
                    let ty = winner.map_or_else(|| e.entity_type.clone(), |w| w.0.clone());
                    entities.push(Entity::new(e.start, e.end, ty));
                }
                (ids, entities)
            }
        }
    }

    /// Full inference for one sentence. `given` supplies gold entity
    /// boundaries in entity-classification mode and is ignored otherwise.
    pub fn predict(&self, tokens: &[String], given: Option<&[Entity]>, opts: &DecodeOptions) -> Result<Prediction> {
        let mut g = Graph::new(&self.store);
        let h = self.encode(&mut g, tokens, None)?;
        let scores = self.ner.scores(&mut g, h)?;
        let scores_val = g.value(scores).clone();
        let given = if self.config.ec_mode { given } else { None };
        let (ids, entities) = self.decode_entities(&scores_val, given);
        let z = attach_labels(&mut g, h, &ids, self.labels.as_ref())?;
        let s = self.rel.pair_scores(&mut g, z)?;
        let s_val = g.value(s);
        let probs = Tensor::new(s_val.shape().to_vec(), s_val.data().iter().map(|&x| sigmoid(x)).collect())?;
        let mut heads = if self.config.single_head {
            single_head_decode(s_val).into_iter().map(|p| vec![p]).collect()
        } else {
            threshold_decode(&probs, opts.threshold)
        };
        if opts.enforce_tree {
            heads = enforce_tree(&heads, &entities, &probs, self.relations.no_relation(), &opts.root_policy);
        }
        let relations = relations_from_heads(&heads, &entities, &self.relations);
        Ok(Prediction {
            tags: self.tagset.decode(&ids),
            entities,
            heads,
            relations,
        })
    }

    /// Reject corpora whose annotations use entity types or relation
    /// labels the model cannot represent.
    pub fn check_inventory(&self, corpus: &[AnnotatedSentence]) -> Result<()> {
        let types = self.tagset.entity_types();
        for (i, s) in corpus.iter().enumerate() {
            if let Some(e) = s.entities.iter().find(|e| !types.contains(&e.entity_type)) {
                return Err(Error::VocabularyMismatch(format!(
                    "record {}: unknown entity type {:?}",
                    i + 1,
                    e.entity_type
                )));
            }
            if let Some(r) = s.relations.iter().find(|r| self.relations.index(&r.label).is_none()) {
                return Err(Error::VocabularyMismatch(format!(
                    "record {}: unknown relation label {:?}",
                    i + 1,
                    r.label
                )));
            }
        }
        Ok(())
    }

    /// Trainable parameter count.
    pub fn num_trainable(&self) -> usize {
        self.store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.value.numel())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_generate, SynthParams};
    use crate::embedding::CasePolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(config: &TrainConfig) -> (JointModel, Vec<AnnotatedSentence>) {
        let corpus = synth_generate(5, 4, &SynthParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vocab = Vocabulary::from_words(corpus.iter().flat_map(|s| s.tokens.iter()), CasePolicy::Exact);
        let words = WordEmbeddingTable::random(vocab.len(), config.word_dim, &mut rng);
        let chars = CharVocabulary::from_chars(corpus.iter().flat_map(|s| s.tokens.iter().flat_map(|t| t.chars())));
        let tagset = TagSet::from_types(&["PER", "LOC"]);
        let rels = RelationLabelSet::new(["Works_for", "Lives_in"]);
        let model = JointModel::new(config, vocab, words, chars, tagset, rels, &mut rng).unwrap();
        (model, corpus)
    }

    fn small() -> TrainConfig {
        TrainConfig {
            lstm_size: 4,
            layer_width: 4,
            word_dim: 3,
            char_dim: 2,
            char_hidden: 2,
            label_dim: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_is_finite_scalar() {
        let (model, corpus) = tiny(&small());
        let mut g = Graph::new(&model.store);
        let loss = model.loss(&mut g, &corpus[0], None).unwrap();
        assert_eq!(g.shape(loss), &[1]);
        assert!(g.scalar(loss).is_finite() && g.scalar(loss) > 0.0);
    }

    #[test]
    fn ablated_models_drop_parameters() {
        let (full, _) = tiny(&small());
        let (no_crf, _) = tiny(&TrainConfig {
            use_crf: false,
            ..small()
        });
        assert!(full.transitions.is_some() && no_crf.transitions.is_none());
        let (no_chars, _) = tiny(&TrainConfig {
            use_char_embeddings: false,
            ..small()
        });
        assert_eq!(no_chars.embedder.output_size(), 3);
        let (no_labels, _) = tiny(&TrainConfig {
            label_dim: 0,
            ..small()
        });
        assert!(no_labels.labels.is_none());
        assert!(no_labels.store.find("label_embedding").is_none());
    }

    #[test]
    fn prediction_shapes() {
        let (model, corpus) = tiny(&small());
        let opts = DecodeOptions::from_config(&model.config);
        let p = model.predict(&corpus[0].tokens, None, &opts).unwrap();
        assert_eq!(p.tags.len(), corpus[0].tokens.len());
        assert!(p.heads.iter().all(|h| !h.is_empty()));
    }

    #[test]
    fn near_one_threshold_keeps_one_pair() {
        let (model, corpus) = tiny(&small());
        let opts = DecodeOptions {
            threshold: 0.99,
            ..DecodeOptions::from_config(&model.config)
        };
        let p = model.predict(&corpus[1].tokens, None, &opts).unwrap();
        assert!(p.heads.iter().all(|h| h.len() == 1));
    }

    #[test]
    fn masks_cover_configured_sites() {
        let (model, _) = tiny(&TrainConfig {
            lstm_layers: 3,
            ..small()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = model.sample_masks(5, &mut rng);
        assert_eq!(m.embedding.as_ref().unwrap().shape(), &[5, model.embedder.output_size()]);
        assert_eq!(m.between_layers.len(), 2);
        assert_eq!(m.output.as_ref().unwrap().shape(), &[5, 8]);
        let keep = 1.0 / (1.0 - 0.3);
        assert!(m.embedding.unwrap().data().iter().all(|&x| x == 0.0 || x == keep));
    }

    #[test]
    fn ec_mode_keeps_given_spans() {
        let (model, corpus) = tiny(&TrainConfig {
            ec_mode: true,
            ..small()
        });
        let s = &corpus[0];
        let opts = DecodeOptions::from_config(&model.config);
        let p = model.predict(&s.tokens, Some(&s.entities), &opts).unwrap();
        assert_eq!(p.entities.iter().map(Entity::span).collect::<Vec<_>>(), s.spans());
        for e in &s.entities {
            for t in &p.tags[e.start..=e.end] {
                assert_ne!(t, "O");
            }
        }
    }

    #[test]
    fn unknown_types_are_a_mismatch() {
        let (model, mut corpus) = tiny(&small());
        model.check_inventory(&corpus).unwrap();
        corpus[0].entities[0].entity_type = "ALIEN".into();
        assert!(matches!(model.check_inventory(&corpus), Err(Error::VocabularyMismatch(_))));
    }
}
