//! Token vectors: a word embedding row concatenated with the final states
//! of a character-level BiLSTM.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::encoder::RecurrentCell;
use crate::error::{Error, Result};

/// How tokens are matched against the word vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CasePolicy {
    Exact,
    /// Exact match, then lowercased match, then UNK.
    #[default]
    LowercaseFallback,
    /// Every word is lowercased on insertion and lookup.
    Fold,
}

impl std::str::FromStr for CasePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(CasePolicy::Exact),
            "lowercase_fallback" => Ok(CasePolicy::LowercaseFallback),
            "fold" => Ok(CasePolicy::Fold),
            other => Err(Error::Config(format!("unknown case policy {other:?}"))),
        }
    }
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const RESERVED: [&str; 2] = ["<pad>", "<unk>"];

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    policy: CasePolicy,
}

impl Vocabulary {
    pub fn new(policy: CasePolicy) -> Self {
        Vocabulary {
            words: RESERVED.iter().map(|s| s.to_string()).collect(),
            index: HashMap::new(),
            policy,
        }
    }

    pub fn from_words<I, S>(words: I, policy: CasePolicy) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary::new(policy);
        for w in words {
            v.insert(w.as_ref());
        }
        v
    }

    /// Insert a word, returning its index. Existing words keep theirs.
    pub fn insert(&mut self, word: &str) -> usize {
        let key = match self.policy {
            CasePolicy::Fold => word.to_lowercase(),
            _ => word.to_string(),
        };
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        self.words.push(key.clone());
        self.index.insert(key, self.words.len() - 1);
        self.words.len() - 1
    }

    pub fn lookup(&self, token: &str) -> usize {
        match self.policy {
            CasePolicy::Exact => self.index.get(token).copied().unwrap_or(UNK),
            CasePolicy::LowercaseFallback => self
                .index
                .get(token)
                .or_else(|| self.index.get(&token.to_lowercase()))
                .copied()
                .unwrap_or(UNK),
            CasePolicy::Fold => self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == RESERVED.len()
    }

    pub fn policy(&self) -> CasePolicy {
        self.policy
    }

    /// All entries, reserved ones first.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Rebuild from a word list produced by [`Vocabulary::words`].
    pub fn from_entries(entries: &[String], policy: CasePolicy) -> Result<Self> {
        if entries.len() < RESERVED.len() || entries[..RESERVED.len()] != RESERVED {
            return Err(Error::VocabularyMismatch(
                "word list does not start with the reserved entries".into(),
            ));
        }
        let mut v = Vocabulary::new(policy);
        for w in &entries[RESERVED.len()..] {
            let before = v.len();
            if v.insert(w) != before {
                return Err(Error::VocabularyMismatch(format!("duplicate word {w:?}")));
            }
        }
        Ok(v)
    }
}

/// Word vectors, one row per vocabulary entry.
#[derive(Clone, Debug)]
pub struct WordEmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
}

impl WordEmbeddingTable {
    /// Uniform in `[-0.1, 0.1]`, with a zero PAD row.
    pub fn random<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        let mut data: Vec<f64> = (0..rows * dim).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        data[PAD * dim..(PAD + 1) * dim].iter_mut().for_each(|x| *x = 0.0);
        WordEmbeddingTable {
            matrix: Tensor::matrix(rows, dim, data).expect("positive dims"),
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

fn is_header(fields: &[&str]) -> bool {
    fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok())
}

/// Read whitespace-separated text vectors (`word v1 ... v_dim` per line,
/// with an optional `<count> <dim>` header).
///
/// The UNK row is the mean of the loaded rows and the PAD row is zero.
pub fn load_word_embeddings(
    path: &Path,
    expected_dim: Option<usize>,
    policy: CasePolicy,
) -> Result<(Vocabulary, WordEmbeddingTable)> {
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vocab = Vocabulary::new(policy);
    let mut rows: Vec<f64> = Vec::new();
    let mut dim = expected_dim;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 1 && is_header(&fields) {
            let header_dim: usize = fields[1].parse().expect("checked");
            match dim {
                Some(d) if d != header_dim => {
                    return Err(parse_err(
                        lineno,
                        format!("header dimension {header_dim} differs from expected {d}"),
                    ))
                }
                _ => dim = Some(header_dim),
            }
            continue;
        }
        let values = &fields[1..];
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(parse_err(
                lineno,
                format!("expected {d} values, found {}", values.len()),
            ));
        }
        let before = vocab.len();
        if vocab.insert(fields[0]) != before {
            // Duplicate word: the first occurrence wins.
            continue;
        }
        for v in values {
            rows.push(
                v.parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("bad value {v:?}: {e}")))?,
            );
        }
    }
    let dim = dim.ok_or_else(|| parse_err(1, "no vectors in file".into()))?;
    let loaded = rows.len() / dim;
    if loaded == 0 {
        return Err(parse_err(1, "no vectors in file".into()));
    }
    let mut mean = vec![0.0; dim];
    for r in rows.chunks(dim) {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= loaded as f64);

    let mut data = vec![0.0; dim];
    data.extend_from_slice(&mean);
    data.extend_from_slice(&rows);
    let matrix = Tensor::matrix(vocab.len(), dim, data)?;
    Ok((
        vocab,
        WordEmbeddingTable {
            matrix,
            trainable: true,
        },
    ))
}

/// Character inventory. Index 0 is reserved for unknown characters.
#[derive(Clone, Debug, PartialEq)]
pub struct CharVocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocabulary {
    pub const UNKNOWN: usize = 0;

    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Self {
        let mut v = CharVocabulary {
            chars: vec!['\u{0}'],
            index: HashMap::new(),
        };
        for c in chars {
            if !v.index.contains_key(&c) {
                v.index.insert(c, v.chars.len());
                v.chars.push(c);
            }
        }
        v
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.len() == 1
    }

    /// Known characters, excluding the reserved slot.
    pub fn chars(&self) -> &[char] {
        &self.chars[1..]
    }
}

/// Character BiLSTM producing a `2 * hidden` vector per token.
#[derive(Clone, Debug)]
pub struct CharComposer {
    pub chars: CharVocabulary,
    pub table: ParamId,
    pub fwd: RecurrentCell,
    pub bwd: RecurrentCell,
}

impl CharComposer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        chars: CharVocabulary,
        char_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..chars.len() * char_dim)
            .map(|_| rng.gen_range(-0.1..=0.1))
            .collect();
        let table = store.add(
            "chars.table",
            Tensor::matrix(chars.len(), char_dim, data).expect("positive dims"),
        );
        let fwd = RecurrentCell::new(store, "chars.fwd", char_dim, hidden, rng);
        let bwd = RecurrentCell::new(store, "chars.bwd", char_dim, hidden, rng);
        CharComposer {
            chars,
            table,
            fwd,
            bwd,
        }
    }

    pub fn output_size(&self) -> usize {
        2 * self.fwd.hidden
    }

    /// `[final forward state ; final backward state]` over the token's
    /// characters, as a `1 x 2 * hidden` row.
    pub fn compose(&self, g: &mut Graph<'_>, token: &str) -> Result<Var> {
        let ids: Vec<usize> = token.chars().map(|c| self.chars.lookup(c)).collect();
        if ids.is_empty() {
            return Err(Error::InvalidTensor("empty token".into()));
        }
        let table = g.param(self.table);
        let embedded = g.gather_rows(table, &ids)?;
        let f = self.fwd.run(g, embedded, false)?;
        let b = self.bwd.run(g, embedded, true)?;
        g.concat(&[*f.last().expect("non-empty"), b[0]], 1)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.table];
        p.extend(self.fwd.params());
        p.extend(self.bwd.params());
        p
    }
}

/// Word lookup plus optional character composition.
#[derive(Clone, Debug)]
pub struct TokenEmbedder {
    pub vocab: Vocabulary,
    pub words: ParamId,
    pub word_dim: usize,
    pub chars: Option<CharComposer>,
}

impl TokenEmbedder {
    pub fn output_size(&self) -> usize {
        self.word_dim + self.chars.as_ref().map_or(0, CharComposer::output_size)
    }

    /// `[word row ; character composition]` as a `1 x output_size` row.
    pub fn compose_token(&self, g: &mut Graph<'_>, token: &str) -> Result<Var> {
        if token.is_empty() {
            return Err(Error::InvalidTensor("empty token".into()));
        }
        let table = g.param(self.words);
        let word = g.gather_rows(table, &[self.vocab.lookup(token)])?;
        match &self.chars {
            Some(c) => {
                let chars = c.compose(g, token)?;
                g.concat(&[word, chars], 1)
            }
            None => Ok(word),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.words];
        if let Some(c) = &self.chars {
            p.extend(c.params());
        }
        p
    }
}
