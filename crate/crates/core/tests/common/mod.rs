use multihead::corpus::{AnnotatedSentence, Entity, Relation};
use proptest::prelude::*;

const TYPES: [&str; 3] = ["PER", "LOC", "ORG"];
const LABELS: [&str; 3] = ["Works_for", "Lives_in", "Located_in"];

/// Valid sentences: non-overlapping spans in order, relations between
/// distinct entities.
pub fn sentence() -> impl Strategy<Value = AnnotatedSentence> {
    (1usize..=12)
        .prop_flat_map(|n| {
            (
                prop::collection::vec("[a-zA-Z]{1,6}|[.,]", n),
                prop::collection::vec((0usize..3, 1usize..=3, 0usize..3), 0..=n),
                prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>(), 0usize..3), 0..=4),
            )
        })
        .prop_map(|(tokens, raw_spans, raw_rels)| {
            let n = tokens.len();
            let mut entities = Vec::new();
            let mut at = 0;
            for (gap, len, ty) in raw_spans {
                let start = at + gap;
                let end = start + len - 1;
                if end >= n {
                    break;
                }
                entities.push(Entity::new(start, end, TYPES[ty]));
                at = end + 1;
            }
            let mut relations = Vec::new();
            if entities.len() >= 2 {
                for (a, b, k) in raw_rels {
                    let from = a.index(entities.len());
                    let to = b.index(entities.len());
                    if from != to {
                        relations.push(Relation::new(from, to, LABELS[k]));
                    }
                }
            }
            AnnotatedSentence {
                tokens,
                entities,
                relations,
            }
        })
}
