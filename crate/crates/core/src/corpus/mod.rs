//! Annotated sentences, the JSON-lines record format, and head targets.

mod bio;
mod synth;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bio::{bio_decode, bio_encode};
pub use synth::{synth_generate, SynthParams, ENTITY_TYPES, RELATION_LABELS};

use crate::error::{Error, Result};
use crate::relhead::{HeadTargets, RelationLabelSet};

/// Token span `start..=end` with a type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
}

impl Entity {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        Entity {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

/// Directed relation between two entities, by index into the entity list.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub from: usize,
    pub to: usize,
    pub label: String,
}

impl Relation {
    pub fn new(from: usize, to: usize, label: impl Into<String>) -> Self {
        Relation {
            from,
            to,
            label: label.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub relations: Vec<Relation>,
}

impl AnnotatedSentence {
    /// Checks spans are in bounds and disjoint and relations reference
    /// distinct, existing entities. Errors are plain messages.
    pub fn check(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        let mut covered = vec![false; n];
        for (idx, e) in self.entities.iter().enumerate() {
            if e.end < e.start {
                return Err(format!("entity {idx} ends ({}) before it starts ({})", e.end, e.start));
            }
            if e.end >= n {
                return Err(format!("entity {idx} span ({}, {}) exceeds {n} tokens", e.start, e.end));
            }
            for c in &mut covered[e.start..=e.end] {
                if *c {
                    return Err(format!("entity {idx} overlaps another entity"));
                }
                *c = true;
            }
        }
        for (idx, r) in self.relations.iter().enumerate() {
            let m = self.entities.len();
            if r.from >= m || r.to >= m {
                return Err(format!("relation {idx} references a missing entity ({m} entities)"));
            }
            if r.from == r.to {
                return Err(format!("relation {idx} links entity {} to itself", r.from));
            }
        }
        Ok(())
    }

    /// Entity spans as `(start, end)` pairs.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        self.entities.iter().map(Entity::span).collect()
    }
}

/// An input record extended with model output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(flatten)]
    pub gold: AnnotatedSentence,
    pub pred_entities: Vec<Entity>,
    pub pred_relations: Vec<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_tags: Option<Vec<String>>,
}

impl PredictionRecord {
    /// The predicted side as an annotated sentence over the same tokens.
    pub fn predicted(&self) -> AnnotatedSentence {
        AnnotatedSentence {
            tokens: self.gold.tokens.clone(),
            entities: self.pred_entities.clone(),
            relations: self.pred_relations.clone(),
        }
    }
}

/// Parse JSON-lines records, skipping blank lines. Record numbers in
/// errors are 1-based line numbers.
pub fn parse_records<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::InvalidRecord {
            record: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

pub fn parse_corpus_str(text: &str) -> Result<Vec<AnnotatedSentence>> {
    parse_records::<AnnotatedSentence>(text)?
        .into_iter()
        .map(|(record, s)| {
            s.check().map_err(|message| Error::InvalidRecord { record, message })?;
            Ok(s)
        })
        .collect()
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>> {
    parse_corpus_str(&std::fs::read_to_string(path)?)
}

pub fn parse_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_records::<PredictionRecord>(&text)?
        .into_iter()
        .map(|(record, p)| {
            p.gold
                .check()
                .and_then(|_| p.predicted().check())
                .map_err(|message| Error::InvalidRecord { record, message })?;
            Ok(p)
        })
        .collect()
}

/// One compact JSON object per line.
pub fn write_records<T: Serialize, W: Write>(mut out: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn serialize_corpus<T: Serialize>(records: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_corpus<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_records(&mut out, records)?;
    out.flush()?;
    Ok(())
}

/// Gold `(head, label)` sets: the last token of each relation's source
/// entity selects the last token of its target; every other token
/// selects itself with `N`.
pub fn to_head_targets(sentence: &AnnotatedSentence, labels: &RelationLabelSet) -> Result<HeadTargets> {
    let n = sentence.tokens.len();
    let mut sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); n];
    for r in &sentence.relations {
        let k = labels
            .index(&r.label)
            .ok_or_else(|| Error::VocabularyMismatch(format!("unknown relation label {:?}", r.label)))?;
        let from = sentence.entities[r.from].end;
        let to = sentence.entities[r.to].end;
        sets[from].insert((to, k));
    }
    let heads = sets
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            if s.is_empty() {
                vec![(i, labels.no_relation())]
            } else {
                s.into_iter().collect()
            }
        })
        .collect();
    Ok(HeadTargets { heads })
}

/// Relations implied by decoded head sets, given the entities whose last
/// tokens anchor them. Pairs touching non-entity tokens and `N` pairs are
/// dropped.
pub fn relations_from_heads(
    heads: &[Vec<(usize, usize)>],
    entities: &[Entity],
    labels: &RelationLabelSet,
) -> Vec<Relation> {
    let entity_at = |tok: usize| entities.iter().position(|e| e.end == tok);
    let mut out = Vec::new();
    for (from, e) in entities.iter().enumerate() {
        for &(j, k) in &heads[e.end] {
            if k == labels.no_relation() {
                continue;
            }
            if let Some(to) = entity_at(j).filter(|&to| to != from) {
                out.push(Relation::new(from, to, labels.label(k)));
            }
        }
    }
    out
}

/// Entity types and relation labels in first-seen order.
pub fn collect_inventory(corpus: &[AnnotatedSentence]) -> (Vec<String>, Vec<String>) {
    let mut types: Vec<String> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for s in corpus {
        for e in &s.entities {
            if !types.contains(&e.entity_type) {
                types.push(e.entity_type.clone());
            }
        }
        for r in &s.relations {
            if !labels.contains(&r.label) {
                labels.push(r.label.clone());
            }
        }
    }
    (types, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_example() -> AnnotatedSentence {
        let tokens = "John Smith went to Disease Control Center in Atlanta"
            .split(' ')
            .map(String::from)
            .collect();
        AnnotatedSentence {
            tokens,
            entities: vec![
                Entity::new(0, 1, "PER"),
                Entity::new(4, 6, "ORG"),
                Entity::new(8, 8, "LOC"),
            ],
            relations: vec![
                Relation::new(0, 1, "Works for"),
                Relation::new(0, 2, "Lives in"),
                Relation::new(1, 2, "Located in"),
            ],
        }
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse_corpus_str("").unwrap().is_empty());
        assert!(parse_corpus_str("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn worked_example_round_trips() {
        let s = worked_example();
        let text = serialize_corpus(std::slice::from_ref(&s)).unwrap();
        assert!(text.contains("\"type\":\"PER\""));
        assert_eq!(parse_corpus_str(&text).unwrap(), vec![s]);
    }

    #[test]
    fn end_before_start_rejected() {
        let line = r#"{"tokens":["a","b"],"entities":[{"start":1,"end":0,"type":"X"}],"relations":[]}"#;
        let err = parse_corpus_str(&format!("\n{line}")).unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { record: 2, .. }), "{err}");
    }

    #[test]
    fn overlap_and_dangling_rejected() {
        let overlap = r#"{"tokens":["a","b"],"entities":[{"start":0,"end":1,"type":"X"},{"start":1,"end":1,"type":"Y"}]}"#;
        assert!(parse_corpus_str(overlap).is_err());
        let dangling = r#"{"tokens":["a"],"entities":[{"start":0,"end":0,"type":"X"}],"relations":[{"from":0,"to":3,"label":"r"}]}"#;
        assert!(parse_corpus_str(dangling).is_err());
        assert!(matches!(parse_corpus_str("{not json"), Err(Error::InvalidRecord { record: 1, .. })));
    }

    #[test]
    fn worked_example_head_targets() {
        let s = worked_example();
        let labels = RelationLabelSet::new(["Works for", "Lives in", "Located in"]);
        let t = to_head_targets(&s, &labels).unwrap();
        let works = labels.index("Works for").unwrap();
        let lives = labels.index("Lives in").unwrap();
        assert_eq!(t.heads[1], vec![(6, works), (8, lives)]);
        assert_eq!(t.heads[0], vec![(0, 0)]);
        assert_eq!(t.heads[6], vec![(8, labels.index("Located in").unwrap())]);
    }

    #[test]
    fn relation_free_sentence_is_all_self_n() {
        let s = AnnotatedSentence {
            tokens: vec!["a".into(), "b".into()],
            ..Default::default()
        };
        let t = to_head_targets(&s, &RelationLabelSet::new(["r"])).unwrap();
        assert_eq!(t.heads, vec![vec![(0, 0)], vec![(1, 0)]]);
    }

    #[test]
    fn shared_tail_gives_two_element_set() {
        let s = AnnotatedSentence {
            tokens: vec!["a".into(), "b".into(), "c".into()],
            entities: vec![Entity::new(0, 0, "X"), Entity::new(2, 2, "Y")],
            relations: vec![Relation::new(0, 1, "r"), Relation::new(0, 1, "q")],
        };
        let t = to_head_targets(&s, &RelationLabelSet::new(["r", "q"])).unwrap();
        assert_eq!(t.heads[0].len(), 2);
    }

    #[test]
    fn unknown_label_is_vocabulary_mismatch() {
        let labels = RelationLabelSet::new(["other"]);
        assert!(matches!(to_head_targets(&worked_example(), &labels), Err(Error::VocabularyMismatch(_))));
    }

    #[test]
    fn heads_map_back_to_relations() {
        let s = worked_example();
        let labels = RelationLabelSet::new(["Works for", "Lives in", "Located in"]);
        let t = to_head_targets(&s, &labels).unwrap();
        let mut rels = relations_from_heads(&t.heads, &s.entities, &labels);
        rels.sort();
        let mut gold = s.relations.clone();
        gold.sort();
        assert_eq!(rels, gold);
    }

    #[test]
    fn prediction_record_flattens_gold() {
        let s = worked_example();
        let p = PredictionRecord {
            gold: s.clone(),
            pred_entities: s.entities.clone(),
            pred_relations: vec![],
            pred_tags: None,
        };
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.starts_with("{\"tokens\""));
        assert!(!text.contains("pred_tags"));
        let back: PredictionRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        let as_gold: AnnotatedSentence = serde_json::from_str(&text).unwrap();
        assert_eq!(as_gold, s);
    }
}
