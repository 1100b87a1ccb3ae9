//! Entity and relation scoring under strict, boundaries and relaxed
//! matching, with micro or macro F1.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, PredictionRecord};
use crate::error::{Error, Result};
use crate::tagger::split_tag;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Span and type must both match.
    #[default]
    Strict,
    /// Span must match; type is ignored.
    Boundaries,
    /// Gold spans are given; an entity is correct if any of its tokens was
    /// tagged with the gold type.
    Relaxed,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(EvalMode::Strict),
            "boundaries" => Ok(EvalMode::Boundaries),
            "relaxed" => Ok(EvalMode::Relaxed),
            other => Err(Error::Config(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

impl std::str::FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            other => Err(Error::Config(format!("unknown averaging {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Entity classes left out of entity counts.
    pub excluded_entity_classes: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ClassCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        ClassCounts { tp, fp, fn_ }
    }

    pub fn add(&mut self, other: ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn gold(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn predicted(&self) -> usize {
        self.tp + self.fp
    }

    pub fn scores(&self) -> Prf {
        prf(self.tp, self.fp, self.fn_)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 with `0/0` read as 0, except that a class with
/// no gold and no predicted items scores 1 across the board.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> Prf {
    if tp + fp + fn_ == 0 {
        return Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// Mean of entity and relation F1.
pub fn overall_f1(entity_f1: f64, relation_f1: f64) -> f64 {
    (entity_f1 + relation_f1) / 2.0
}

/// Per-class tallies; accumulation is order independent.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub entities: BTreeMap<String, ClassCounts>,
    pub relations: BTreeMap<String, ClassCounts>,
}

impl EvalCounts {
    pub fn merge(&mut self, other: &EvalCounts) {
        for (k, c) in &other.entities {
            self.entities.entry(k.clone()).or_default().add(*c);
        }
        for (k, c) in &other.relations {
            self.relations.entry(k.clone()).or_default().add(*c);
        }
    }

    fn entity(&mut self, class: &str) -> &mut ClassCounts {
        self.entities.entry(class.to_string()).or_default()
    }

    fn relation(&mut self, class: &str) -> &mut ClassCounts {
        self.relations.entry(class.to_string()).or_default()
    }
}

/// Tally entity matches for one sentence and return, for each gold entity,
/// the predicted entity it is correctly matched to.
pub fn score_entities(
    gold: &AnnotatedSentence,
    pred: &AnnotatedSentence,
    pred_tags: Option<&[String]>,
    opts: &EvalOptions,
    counts: &mut EvalCounts,
) -> Result<Vec<Option<usize>>> {
    let excluded = |ty: &str| opts.excluded_entity_classes.iter().any(|c| c == ty);
    let pred_by_span: HashMap<(usize, usize), usize> =
        pred.entities.iter().enumerate().map(|(i, e)| (e.span(), i)).collect();

    let mut matched = vec![None; gold.entities.len()];
    match opts.mode {
        EvalMode::Strict | EvalMode::Boundaries => {
            for (gi, g) in gold.entities.iter().enumerate() {
                if let Some(&pi) = pred_by_span.get(&g.span()) {
                    if opts.mode == EvalMode::Boundaries || pred.entities[pi].entity_type == g.entity_type {
                        matched[gi] = Some(pi);
                    }
                }
            }
        }
        EvalMode::Relaxed => {
            let tags = pred_tags.ok_or(Error::RelaxedNeedsGivenBoundaries)?;
            let gold_spans: BTreeSet<_> = gold.spans().into_iter().collect();
            let pred_spans: BTreeSet<_> = pred.spans().into_iter().collect();
            if tags.len() != gold.tokens.len() || gold_spans != pred_spans {
                return Err(Error::RelaxedNeedsGivenBoundaries);
            }
            for (gi, g) in gold.entities.iter().enumerate() {
                let hit = tags[g.start..=g.end]
                    .iter()
                    .any(|t| split_tag(t).is_some_and(|(_, ty)| ty == g.entity_type));
                if hit {
                    matched[gi] = Some(pred_by_span[&g.span()]);
                }
            }
        }
    }

    let mut pred_hit = vec![false; pred.entities.len()];
    for (gi, g) in gold.entities.iter().enumerate() {
        match matched[gi] {
            Some(pi) => {
                pred_hit[pi] = true;
                if !excluded(&g.entity_type) {
                    counts.entity(&g.entity_type).tp += 1;
                }
            }
            None if !excluded(&g.entity_type) => counts.entity(&g.entity_type).fn_ += 1,
            None => {}
        }
    }
    for (pi, p) in pred.entities.iter().enumerate() {
        if !pred_hit[pi] && !excluded(&p.entity_type) {
            counts.entity(&p.entity_type).fp += 1;
        }
    }
    Ok(matched)
}

/// Tally relations for one sentence. A predicted relation is correct when
/// its label matches a gold relation whose two arguments are matched to
/// the predicted arguments.
pub fn score_relations(
    gold: &AnnotatedSentence,
    pred: &AnnotatedSentence,
    matched: &[Option<usize>],
    counts: &mut EvalCounts,
) {
    let gold_keys: BTreeSet<(Option<usize>, Option<usize>, &str)> = gold
        .relations
        .iter()
        .map(|r| (matched[r.from], matched[r.to], r.label.as_str()))
        .collect();
    let pred_keys: BTreeSet<(usize, usize, &str)> =
        pred.relations.iter().map(|r| (r.from, r.to, r.label.as_str())).collect();
    let gold_set: BTreeSet<(usize, usize, &str)> =
        gold.relations.iter().map(|r| (r.from, r.to, r.label.as_str())).collect();

    for &(gf, gt, label) in &gold_set {
        let key = (matched[gf], matched[gt]);
        let hit = matches!(key, (Some(pf), Some(pt)) if pred_keys.contains(&(pf, pt, label)));
        if hit {
            counts.relation(label).tp += 1;
        } else {
            counts.relation(label).fn_ += 1;
        }
    }
    for &(pf, pt, label) in &pred_keys {
        if !gold_keys.contains(&(Some(pf), Some(pt), label)) {
            counts.relation(label).fp += 1;
        }
    }
}

/// Score a whole corpus. `pred_tags`, when given, holds one tag sequence
/// per sentence and is required by relaxed mode.
pub fn evaluate(
    gold: &[AnnotatedSentence],
    pred: &[AnnotatedSentence],
    pred_tags: Option<&[Vec<String>]>,
    opts: &EvalOptions,
) -> Result<EvalCounts> {
    if gold.len() != pred.len() {
        return Err(Error::Config(format!(
            "{} gold sentences but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts = EvalCounts::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.tokens != p.tokens {
            return Err(Error::InvalidRecord {
                record: i + 1,
                message: "gold and predicted tokens differ".into(),
            });
        }
        let tags = pred_tags.map(|t| t[i].as_slice());
        let matched = score_entities(g, p, tags, opts, &mut counts)?;
        score_relations(g, p, &matched, &mut counts);
    }
    Ok(counts)
}

/// Score prediction records against the gold side they carry.
pub fn evaluate_records(records: &[PredictionRecord], opts: &EvalOptions) -> Result<EvalCounts> {
    let gold: Vec<AnnotatedSentence> = records.iter().map(|r| r.gold.clone()).collect();
    let pred: Vec<AnnotatedSentence> = records.iter().map(PredictionRecord::predicted).collect();
    let tags: Option<Vec<Vec<String>>> = records.iter().map(|r| r.pred_tags.clone()).collect();
    evaluate(&gold, &pred, tags.as_deref(), opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    #[serde(flatten)]
    pub counts: ClassCounts,
    #[serde(flatten)]
    pub scores: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    #[serde(flatten)]
    pub scores: Prf,
    pub per_class: BTreeMap<String, ClassReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging: Averaging,
    pub entities: TaskReport,
    pub relations: TaskReport,
    pub overall_f1: f64,
}

fn task_report(classes: &BTreeMap<String, ClassCounts>, averaging: Averaging) -> TaskReport {
    let per_class = classes
        .iter()
        .map(|(k, c)| {
            (
                k.clone(),
                ClassReport {
                    counts: *c,
                    scores: c.scores(),
                },
            )
        })
        .collect();
    let scores = match averaging {
        Averaging::Micro => {
            let mut pooled = ClassCounts::default();
            classes.values().for_each(|c| pooled.add(*c));
            pooled.scores()
        }
        Averaging::Macro => {
            let active: Vec<Prf> = classes
                .values()
                .filter(|c| c.gold() > 0 || c.predicted() > 0)
                .map(ClassCounts::scores)
                .collect();
            if active.is_empty() {
                prf(0, 0, 0)
            } else {
                let k = active.len() as f64;
                Prf {
                    precision: active.iter().map(|s| s.precision).sum::<f64>() / k,
                    recall: active.iter().map(|s| s.recall).sum::<f64>() / k,
                    f1: active.iter().map(|s| s.f1).sum::<f64>() / k,
                }
            }
        }
    };
    TaskReport { scores, per_class }
}

pub fn aggregate(counts: &EvalCounts, averaging: Averaging) -> EvalReport {
    let entities = task_report(&counts.entities, averaging);
    let relations = task_report(&counts.relations, averaging);
    let overall = overall_f1(entities.scores.f1, relations.scores.f1);
    EvalReport {
        averaging,
        entities,
        relations,
        overall_f1: overall,
    }
}
