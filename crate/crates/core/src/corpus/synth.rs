//! Templated synthetic corpora with a controllable number of heads per
//! relation-bearing token.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, Entity, Relation};
use crate::error::{Error, Result};

pub const ENTITY_TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];
pub const RELATION_LABELS: [&str; 4] = ["Works_for", "Lives_in", "Located_in", "Knows"];

const NAMES: [&[&str]; 4] = [
    &["John Smith", "Mary Jones", "Alice", "Bob Lee", "Carol", "David Kim", "Erin", "Frank Moore"],
    &["Atlanta", "New York", "Paris", "Boston", "Lake Tahoe", "Berlin", "Rome", "San Diego"],
    &["Acme Corp", "Disease Center", "Globex", "Initech", "Red Cross", "Umbrella Inc", "Stark Labs", "Wayne Group"],
    &["Olympics", "Nobel Prize", "World Cup", "Linux", "Ebola", "Easter", "Jazz Festival", "Python"],
];

const CONNECTIVES: [&[&str]; 4] = [
    &["works for", "is employed by"],
    &["lives in", "resides in"],
    &["is located in", "is based in"],
    &["knows", "met with"],
];

const PREFIXES: [&str; 4] = ["Yesterday ,", "Reportedly ,", "In 2001 ,", "According to sources ,"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Number of entity types drawn from [`ENTITY_TYPES`], 1 to 4.
    pub entity_types: usize,
    /// Number of relation labels drawn from [`RELATION_LABELS`], 1 to 4.
    pub relation_labels: usize,
    /// Gold heads of the relation-bearing token, 1 or 2.
    pub multiplicity: usize,
    /// Probability of a trailing unrelated entity.
    pub distractor_rate: f64,
    /// Probability of a leading filler phrase.
    pub prefix_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            entity_types: 2,
            relation_labels: 2,
            multiplicity: 2,
            distractor_rate: 0.3,
            prefix_rate: 0.3,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if !(1..=ENTITY_TYPES.len()).contains(&self.entity_types) {
            return Err(Error::Config(format!("entity_types must be 1..=4, got {}", self.entity_types)));
        }
        if !(1..=RELATION_LABELS.len()).contains(&self.relation_labels) {
            return Err(Error::Config(format!(
                "relation_labels must be 1..=4, got {}",
                self.relation_labels
            )));
        }
        if !(1..=2).contains(&self.multiplicity) {
            return Err(Error::Config(format!("multiplicity must be 1 or 2, got {}", self.multiplicity)));
        }
        for (name, rate) in [("distractor_rate", self.distractor_rate), ("prefix_rate", self.prefix_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {rate}")));
            }
        }
        Ok(())
    }
}

struct Builder {
    tokens: Vec<String>,
    entities: Vec<Entity>,
}

impl Builder {
    fn words(&mut self, text: &str) {
        self.tokens.extend(text.split(' ').map(String::from));
    }

    fn entity(&mut self, name: &str, ty: &str) -> usize {
        let start = self.tokens.len();
        self.words(name);
        self.entities.push(Entity::new(start, self.tokens.len() - 1, ty));
        self.entities.len() - 1
    }
}

/// `size` sentences of the form
/// `[prefix] SRC conn1 T1 [and conn2 T2] [near D] .`
/// where SRC is the only relation-bearing entity and holds exactly
/// `multiplicity` relations. Identical seeds give identical corpora.
pub fn synth_generate(seed: u64, size: usize, params: &SynthParams) -> Result<Vec<AnnotatedSentence>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        let mut b = Builder {
            tokens: Vec::new(),
            entities: Vec::new(),
        };
        if rng.gen_bool(params.prefix_rate) {
            b.words(PREFIXES.choose(&mut rng).expect("non-empty"));
        }
        let pick_type = |rng: &mut ChaCha8Rng| rng.gen_range(0..params.entity_types);
        let src_type = pick_type(&mut rng);
        let src_name = *NAMES[src_type].choose(&mut rng).expect("non-empty");
        let src = b.entity(src_name, ENTITY_TYPES[src_type]);
        let mut used = vec![src_name];
        let mut relations = Vec::new();
        for m in 0..params.multiplicity {
            if m > 0 {
                b.words("and");
            }
            let label = rng.gen_range(0..params.relation_labels);
            b.words(CONNECTIVES[label].choose(&mut rng).expect("non-empty"));
            let ty = pick_type(&mut rng);
            let name = fresh_name(&mut rng, ty, &used);
            used.push(name);
            let target = b.entity(name, ENTITY_TYPES[ty]);
            relations.push(Relation::new(src, target, RELATION_LABELS[label]));
        }
        if rng.gen_bool(params.distractor_rate) {
            b.words("near");
            let ty = pick_type(&mut rng);
            let name = fresh_name(&mut rng, ty, &used);
            b.entity(name, ENTITY_TYPES[ty]);
        }
        b.words(".");
        out.push(AnnotatedSentence {
            tokens: b.tokens,
            entities: b.entities,
            relations,
        });
    }
    Ok(out)
}

fn fresh_name(rng: &mut ChaCha8Rng, ty: usize, used: &[&str]) -> &'static str {
    let choices: Vec<&'static str> = NAMES[ty].iter().copied().filter(|n| !used.contains(n)).collect();
    choices.choose(rng).expect("lexicons outnumber entities per sentence")
}
