use super::{AnnotatedSentence, Entity};
use crate::tagger::{split_tag, OUTSIDE};

/// `B-type` on the first token of each entity, `I-type` on the rest,
/// `O` elsewhere.
pub fn bio_encode(sentence: &AnnotatedSentence) -> Vec<String> {
    let mut tags = vec![OUTSIDE.to_string(); sentence.tokens.len()];
    for e in &sentence.entities {
        tags[e.start] = format!("B-{}", e.entity_type);
        for t in &mut tags[e.start + 1..=e.end] {
            *t = format!("I-{}", e.entity_type);
        }
    }
    tags
}

/// Maximal `B I*` runs become entities. An `I-X` that does not continue
/// an `X` entity starts a new one; unrecognised tags count as `O`.
pub fn bio_decode<S: AsRef<str>>(tags: &[S]) -> Vec<Entity> {
    let mut out: Vec<Entity> = Vec::new();
    let mut open = false;
    for (i, tag) in tags.iter().enumerate() {
        match split_tag(tag.as_ref()) {
            Some(('B', ty)) => {
                out.push(Entity::new(i, i, ty));
                open = true;
            }
            Some(('I', ty)) => match out.last_mut() {
                Some(last) if open && last.entity_type == ty => last.end = i,
                _ => {
                    out.push(Entity::new(i, i, ty));
                    open = true;
                }
            },
            _ => open = false,
        }
    }
    out
}
