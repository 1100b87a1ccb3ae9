//! Evaluation arithmetic and matching properties.

mod common;

use multihead::corpus::{AnnotatedSentence, Relation};
use multihead::evalkit::{
    aggregate, evaluate, overall_f1, prf, Averaging, ClassCounts, EvalCounts, EvalMode, EvalOptions,
};
use proptest::prelude::*;

fn opts(mode: EvalMode) -> EvalOptions {
    EvalOptions {
        mode,
        excluded_entity_classes: Vec::new(),
    }
}

/// A prediction over the same tokens: some gold entities dropped or
/// retyped, and some surviving relations dropped.
fn perturbed() -> impl Strategy<Value = (AnnotatedSentence, AnnotatedSentence)> {
    common::sentence().prop_flat_map(|gold| {
        let e = gold.entities.len();
        let r = gold.relations.len();
        (
            Just(gold),
            prop::collection::vec(0u8..4, e),
            prop::collection::vec(any::<bool>(), r),
        )
            .prop_map(|(gold, fate, keep_rel)| {
                let mut pred = gold.clone();
                let mut new_index = vec![None; gold.entities.len()];
                pred.entities.clear();
                for (i, ent) in gold.entities.iter().enumerate() {
                    match fate[i] {
                        0 => continue,
                        1 => {
                            let mut ent = ent.clone();
                            ent.entity_type = "MISC".into();
                            pred.entities.push(ent);
                        }
                        _ => pred.entities.push(ent.clone()),
                    }
                    new_index[i] = Some(pred.entities.len() - 1);
                }
                pred.relations = gold
                    .relations
                    .iter()
                    .zip(&keep_rel)
                    .filter(|(_, &k)| k)
                    .filter_map(|(rel, _)| {
                        Some(Relation::new(new_index[rel.from]?, new_index[rel.to]?, rel.label.clone()))
                    })
                    .collect();
                (gold, pred)
            })
    })
}

proptest! {
    #[test]
    fn identical_annotations_score_one(corpus in prop::collection::vec(common::sentence(), 1..5)) {
        for mode in [EvalMode::Strict, EvalMode::Boundaries] {
            for averaging in [Averaging::Micro, Averaging::Macro] {
                let report = aggregate(&evaluate(&corpus, &corpus, None, &opts(mode)).unwrap(), averaging);
                prop_assert_eq!(report.entities.scores.f1, 1.0);
                prop_assert_eq!(report.relations.scores.f1, 1.0);
                prop_assert_eq!(report.overall_f1, 1.0);
            }
        }
    }

    #[test]
    fn scores_are_bounded_and_swap_under_exchange(pairs in prop::collection::vec(perturbed(), 1..5)) {
        let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        for mode in [EvalMode::Strict, EvalMode::Boundaries] {
            let forward = evaluate(&gold, &pred, None, &opts(mode)).unwrap();
            let backward = evaluate(&pred, &gold, None, &opts(mode)).unwrap();
            for averaging in [Averaging::Micro, Averaging::Macro] {
                let r = aggregate(&forward, averaging);
                for s in [r.entities.scores, r.relations.scores] {
                    prop_assert!((0.0..=1.0).contains(&s.precision));
                    prop_assert!((0.0..=1.0).contains(&s.recall));
                    prop_assert!((0.0..=1.0).contains(&s.f1));
                    prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-12);
                }
            }
            let f = aggregate(&forward, Averaging::Micro);
            let b = aggregate(&backward, Averaging::Micro);
            prop_assert_eq!(f.entities.scores.precision, b.entities.scores.recall);
            prop_assert_eq!(f.entities.scores.recall, b.entities.scores.precision);
            prop_assert_eq!(f.relations.scores.precision, b.relations.scores.recall);
            prop_assert_eq!(f.entities.scores.f1, b.entities.scores.f1);
        }
    }

    #[test]
    fn boundaries_never_score_below_strict(pairs in prop::collection::vec(perturbed(), 1..5)) {
        let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let pooled = |c: &EvalCounts| {
            let mut all = ClassCounts::default();
            c.entities.values().for_each(|x| all.add(*x));
            all.tp
        };
        let strict = evaluate(&gold, &pred, None, &opts(EvalMode::Strict)).unwrap();
        let loose = evaluate(&gold, &pred, None, &opts(EvalMode::Boundaries)).unwrap();
        prop_assert!(pooled(&loose) >= pooled(&strict));
    }

    #[test]
    fn prf_matches_its_definition(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        let s = prf(tp, fp, fn_);
        if tp + fp + fn_ > 0 {
            let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            prop_assert!((s.f1 - f1).abs() < 1e-12);
        }
    }
}

#[test]
fn one_of_each_gives_one_half() {
    let s = prf(1, 1, 1);
    assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
}

#[test]
fn overall_is_the_mean_of_the_two_tasks() {
    assert!((overall_f1(81.16, 47.14) - 64.15).abs() < 1e-9);
    assert_eq!(overall_f1(1.0, 0.0), 0.5);
}

#[test]
fn micro_and_macro_differ_by_pooling() {
    let mut counts = EvalCounts::default();
    counts.entities.insert("A".into(), ClassCounts::new(1, 0, 0));
    counts.entities.insert("B".into(), ClassCounts::new(0, 1, 1));
    let macro_avg = aggregate(&counts, Averaging::Macro);
    let micro = aggregate(&counts, Averaging::Micro);
    assert_eq!(macro_avg.entities.scores.f1, 0.5);
    assert_eq!(micro.entities.scores.f1, 0.5);
    assert_eq!(micro.entities.scores.precision, 0.5);

    counts.entities.insert("A".into(), ClassCounts::new(3, 0, 0));
    let micro = aggregate(&counts, Averaging::Micro);
    assert!((micro.entities.scores.f1 - 0.75).abs() < 1e-12);
    assert_eq!(aggregate(&counts, Averaging::Macro).entities.scores.f1, 0.5);
}

#[test]
fn excluded_classes_do_not_count() {
    let gold = common_sentence();
    let mut pred = gold.clone();
    pred.entities[1].entity_type = "LOC".into();
    pred.relations.clear();
    let o = EvalOptions {
        mode: EvalMode::Strict,
        excluded_entity_classes: vec!["ORG".into()],
    };
    let counts = evaluate(std::slice::from_ref(&gold), &[pred], None, &o).unwrap();
    assert!(!counts.entities.contains_key("ORG"));
    assert_eq!(counts.entities["LOC"], ClassCounts::new(0, 1, 0));
    assert_eq!(counts.entities["PER"], ClassCounts::new(1, 0, 0));
}

fn common_sentence() -> AnnotatedSentence {
    use multihead::corpus::Entity;
    AnnotatedSentence {
        tokens: "Ann works for Acme".split(' ').map(String::from).collect(),
        entities: vec![Entity::new(0, 0, "PER"), Entity::new(3, 3, "ORG")],
        relations: vec![Relation::new(0, 1, "Works_for")],
    }
}
