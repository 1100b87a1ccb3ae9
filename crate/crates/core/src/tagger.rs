//! Entity tagging head: per-token tag scores, a linear-chain CRF over BIO
//! tags, the softmax alternative, and label embeddings for the relation
//! layer.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::encoder::glorot_uniform;
use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";

/// The `p` emittable BIO tags, plus the auxiliary START (`p`) and END
/// (`p + 1`) indices used only by the transition matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    /// `O` first, then `B-t`, `I-t` for each type in the given order.
    pub fn from_types<S: AsRef<str>>(types: &[S]) -> Self {
        let mut tags = vec![OUTSIDE.to_string()];
        for t in types {
            tags.push(format!("B-{}", t.as_ref()));
            tags.push(format!("I-{}", t.as_ref()));
        }
        Self::from_tags(tags).expect("well-formed by construction")
    }

    pub fn from_tags(tags: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> =
            tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tags.len() {
            return Err(Error::Config("duplicate tag in tag set".into()));
        }
        if tags.iter().filter(|t| *t == OUTSIDE).count() != 1 {
            return Err(Error::Config("tag set needs exactly one O tag".into()));
        }
        for t in &tags {
            match split_tag(t) {
                Some((prefix, ty)) => {
                    let other = if prefix == 'B' { 'I' } else { 'B' };
                    if !index.contains_key(&format!("{other}-{ty}")) {
                        return Err(Error::Config(format!("tag {t} has no {other}-{ty} partner")));
                    }
                }
                None if t == OUTSIDE => {}
                None => return Err(Error::Config(format!("malformed tag {t:?}"))),
            }
        }
        Ok(TagSet { tags, index })
    }

    /// Number of emittable tags `p`.
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn start(&self) -> usize {
        self.tags.len()
    }

    pub fn end(&self) -> usize {
        self.tags.len() + 1
    }

    pub fn outside(&self) -> usize {
        self.index[OUTSIDE]
    }

    pub fn index(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, i: usize) -> &str {
        &self.tags[i]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Entity types in tag-set order.
    pub fn entity_types(&self) -> Vec<String> {
        self.tags
            .iter()
            .filter_map(|t| match split_tag(t) {
                Some(('B', ty)) => Some(ty.to_string()),
                _ => None,
            })
            .collect()
    }

    pub fn encode(&self, tags: &[String]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.index(t)
                    .ok_or_else(|| Error::VocabularyMismatch(format!("unknown tag {t:?}")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tags[i].clone()).collect()
    }
}

/// Split `B-X` / `I-X` into the prefix and the type.
pub fn split_tag(tag: &str) -> Option<(char, &str)> {
    let (prefix, ty) = tag.split_once('-')?;
    match prefix {
        "B" if !ty.is_empty() => Some(('B', ty)),
        "I" if !ty.is_empty() => Some(('I', ty)),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// `s_i = f(h_i U + b) V`, with `U: 2d x l`, `b: 1 x l`, `V: l x p`.
#[derive(Clone, Debug)]
pub struct NerScorer {
    pub hidden_proj: ParamId,
    pub bias: ParamId,
    pub out_proj: ParamId,
    pub activation: Activation,
}

impl NerScorer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input: usize,
        width: usize,
        num_tags: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        NerScorer {
            hidden_proj: store.add("ner.hidden_proj", glorot_uniform(rng, input, width)),
            bias: store.add("ner.bias", Tensor::zeros(&[1, width])),
            out_proj: store.add("ner.out_proj", glorot_uniform(rng, width, num_tags)),
            activation,
        }
    }

    /// Tag scores for every token: `n x 2d` in, `n x p` out.
    pub fn scores(&self, g: &mut Graph<'_>, h: Var) -> Result<Var> {
        let u = g.param(self.hidden_proj);
        let b = g.param(self.bias);
        let v = g.param(self.out_proj);
        let pre = g.matmul(h, u)?;
        let pre = g.add(pre, b)?;
        let act = self.activation.apply(g, pre);
        g.matmul(act, v)
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.hidden_proj, self.bias, self.out_proj]
    }
}

fn check_crf_shapes(g: &Graph<'_>, scores: Var, trans: Var) -> Result<(usize, usize)> {
    let st = g.value(scores);
    let (n, p) = (st.rows(), st.cols());
    let ts = g.shape(trans);
    if ts != [p + 2, p + 2] {
        return Err(Error::Shape {
            op: "crf",
            left: st.shape().to_vec(),
            right: ts.to_vec(),
        });
    }
    Ok((n, p))
}

fn check_tags(tags: &[usize], n: usize, p: usize) -> Result<()> {
    if tags.len() != n {
        return Err(Error::Shape {
            op: "crf tags",
            left: vec![n],
            right: vec![tags.len()],
        });
    }
    if let Some(&bad) = tags.iter().find(|&&t| t >= p) {
        return Err(Error::OutOfRange {
            context: "tag index",
            index: bad,
            len: p,
        });
    }
    Ok(())
}

/// Sum of emission scores plus START, pairwise and END transitions.
pub fn crf_sequence_score(g: &mut Graph<'_>, scores: Var, trans: Var, tags: &[usize]) -> Result<Var> {
    let (n, p) = check_crf_shapes(g, scores, trans)?;
    check_tags(tags, n, p)?;
    let width = p + 2;
    let (start, end) = (p, p + 1);
    let emit_idx: Vec<usize> = tags.iter().enumerate().map(|(i, &y)| i * p + y).collect();
    let mut trans_idx = vec![start * width + tags[0]];
    trans_idx.extend(tags.windows(2).map(|w| w[0] * width + w[1]));
    trans_idx.push(tags[n - 1] * width + end);
    let emit = g.gather_elems(scores, &emit_idx)?;
    let moves = g.gather_elems(trans, &trans_idx)?;
    let e = g.sum(emit);
    let t = g.sum(moves);
    g.add(e, t)
}

/// Log partition function by the forward algorithm in log space.
pub fn crf_log_partition(g: &mut Graph<'_>, scores: Var, trans: Var) -> Result<Var> {
    let (n, p) = check_crf_shapes(g, scores, trans)?;
    let width = p + 2;
    let (start, end) = (p, p + 1);
    let start_idx: Vec<usize> = (0..p).map(|j| start * width + j).collect();
    let end_idx: Vec<usize> = (0..p).map(|j| j * width + end).collect();
    // Row j of the block holds the transitions into tag j.
    let block_idx: Vec<usize> = (0..p)
        .flat_map(|j| (0..p).map(move |i| i * width + j))
        .collect();

    let from_start = g.gather_elems(trans, &start_idx)?;
    let first = g.gather_rows(scores, &[0])?;
    let mut alpha = g.add(from_start, first)?;
    if n > 1 {
        let block = g.gather_elems(trans, &block_idx)?;
        let block = g.reshape(block, &[p, p])?;
        for t in 1..n {
            let cand = g.add(block, alpha)?;
            let lse = g.log_sum_exp_rows(cand);
            let lse = g.reshape(lse, &[1, p])?;
            let emit = g.gather_rows(scores, &[t])?;
            alpha = g.add(lse, emit)?;
        }
    }
    let to_end = g.gather_elems(trans, &end_idx)?;
    let last = g.add(alpha, to_end)?;
    let z = g.log_sum_exp_rows(last);
    g.reshape(z, &[1])
}

/// `log Z - score(gold)`.
pub fn crf_nll(g: &mut Graph<'_>, scores: Var, trans: Var, gold: &[usize]) -> Result<Var> {
    let z = crf_log_partition(g, scores, trans)?;
    let s = crf_sequence_score(g, scores, trans, gold)?;
    let s = g.reshape(s, &[1])?;
    g.sub(z, s)
}

/// Plain-value sequence score with a fixed summation order: emissions
/// left to right, then START, pairwise and END transitions.
pub fn sequence_score(scores: &Tensor, trans: &Tensor, tags: &[usize]) -> f64 {
    let p = scores.cols();
    let (start, end) = (p, p + 1);
    let mut total = 0.0;
    for (i, &y) in tags.iter().enumerate() {
        total += scores.get2(i, y);
    }
    total += trans.get2(start, tags[0]);
    for w in tags.windows(2) {
        total += trans.get2(w[0], w[1]);
    }
    total += trans.get2(tags[tags.len() - 1], end);
    total
}

/// Highest-scoring tag sequence. Ties go to the lowest tag index.
///
/// The returned score is recomputed with [`sequence_score`] on the decoded
/// path.
pub fn viterbi_decode(scores: &Tensor, trans: &Tensor) -> (Vec<usize>, f64) {
    let (n, p) = (scores.rows(), scores.cols());
    let (start, end) = (p, p + 1);
    let mut delta: Vec<f64> = (0..p).map(|j| trans.get2(start, j) + scores.get2(0, j)).collect();
    let mut back = vec![vec![0usize; p]; n];
    for t in 1..n {
        let mut next = vec![0.0; p];
        for j in 0..p {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, &d) in delta.iter().enumerate() {
                let cand = d + trans.get2(i, j);
                if cand > best {
                    best = cand;
                    arg = i;
                }
            }
            next[j] = best + scores.get2(t, j);
            back[t][j] = arg;
        }
        delta = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (j, &d) in delta.iter().enumerate() {
        let cand = d + trans.get2(j, end);
        if cand > best {
            best = cand;
            last = j;
        }
    }
    let mut path = vec![last; n];
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    let score = sequence_score(scores, trans, &path);
    (path, score)
}

/// Mean over tokens of `-log softmax(s_i)[gold_i]`.
pub fn softmax_tag_loss(g: &mut Graph<'_>, scores: Var, gold: &[usize]) -> Result<Var> {
    let st = g.value(scores);
    let (n, p) = (st.rows(), st.cols());
    check_tags(gold, n, p)?;
    let idx: Vec<usize> = gold.iter().enumerate().map(|(i, &y)| i * p + y).collect();
    let lse = g.log_sum_exp_rows(scores);
    let lse = g.sum(lse);
    let picked = g.gather_elems(scores, &idx)?;
    let picked = g.sum(picked);
    let total = g.sub(lse, picked)?;
    Ok(g.scale(total, 1.0 / n as f64))
}

/// Per-token argmax; ties go to the lowest index.
pub fn greedy_decode(scores: &Tensor) -> Vec<usize> {
    (0..scores.rows()).map(|i| argmax(scores.row_slice(i))).collect()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// One learned vector per emittable tag.
#[derive(Clone, Debug)]
pub struct LabelEmbedding {
    pub table: ParamId,
    pub dim: usize,
}

impl LabelEmbedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, num_tags: usize, dim: usize, rng: &mut R) -> Self {
        let data = (0..num_tags * dim).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        LabelEmbedding {
            table: store.add("label_embedding", Tensor::matrix(num_tags, dim, data).expect("positive dims")),
            dim,
        }
    }
}

/// `z_i = [h_i ; g_{tag_i}]`, or `h` itself without label embeddings.
pub fn attach_labels(
    g: &mut Graph<'_>,
    h: Var,
    tags: &[usize],
    labels: Option<&LabelEmbedding>,
) -> Result<Var> {
    let Some(labels) = labels else { return Ok(h) };
    let n = g.value(h).rows();
    if tags.len() != n {
        return Err(Error::Shape {
            op: "attach_labels",
            left: vec![n],
            right: vec![tags.len()],
        });
    }
    let table = g.param(labels.table);
    let emb = g.gather_rows(table, tags)?;
    g.concat(&[h, emb], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn tagset_layout() {
        let ts = TagSet::from_types(&["ORG", "PER"]);
        assert_eq!(ts.tags(), &["O", "B-ORG", "I-ORG", "B-PER", "I-PER"]);
        assert_eq!(ts.start(), 5);
        assert_eq!(ts.end(), 6);
        assert_eq!(ts.entity_types(), vec!["ORG", "PER"]);
        assert!(TagSet::from_tags(vec!["O".into(), "B-X".into()]).is_err());
        assert!(TagSet::from_tags(vec!["B-X".into(), "I-X".into()]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let ner = NerScorer::new(&mut store, 4, 3, 5, Activation::Tanh, &mut rng);
        for id in ner.params() {
            store.get_mut(id).value.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut g = Graph::new(&store);
        let h = g.constant(random(&mut rng, 2, 4));
        let s = ner.scores(&mut g, h).unwrap();
        assert_eq!(g.shape(s), &[2, 5]);
        assert!(g.value(s).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_rows_when_input_projection_is_zero() {
        // p = l = 3, U = 0, b = e_1, V = I  =>  every row = tanh(e_1).
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let ner = NerScorer::new(&mut store, 2, 3, 3, Activation::Tanh, &mut rng);
        store.set_value(ner.hidden_proj, Tensor::zeros(&[2, 3])).unwrap();
        store.set_value(ner.bias, Tensor::row(vec![0.0, 1.0, 0.0])).unwrap();
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        store.set_value(ner.out_proj, eye).unwrap();
        let mut g = Graph::new(&store);
        let h = g.constant(random(&mut rng, 4, 2));
        let s = ner.scores(&mut g, h).unwrap();
        for i in 0..4 {
            assert_eq!(g.value(s).row_slice(i), &[0.0, 1f64.tanh(), 0.0]);
        }
    }

    #[test]
    fn scores_match_direct_matrix_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let ner = NerScorer::new(&mut store, 2, 4, 3, Activation::Tanh, &mut rng);
        store.set_value(ner.bias, random(&mut rng, 1, 4)).unwrap();
        let h = random(&mut rng, 2, 2);
        let (u, b, v) = (store.value(ner.hidden_proj), store.value(ner.bias), store.value(ner.out_proj));
        let mut g = Graph::new(&store);
        let hv = g.constant(h.clone());
        let s = ner.scores(&mut g, hv).unwrap();
        for i in 0..2 {
            for k in 0..3 {
                let mut expected = 0.0;
                for l in 0..4 {
                    let pre = b.get2(0, l) + (0..2).map(|c| h.get2(i, c) * u.get2(c, l)).sum::<f64>();
                    expected += pre.tanh() * v.get2(l, k);
                }
                assert!((g.value(s).get2(i, k) - expected).abs() < 1e-14);
            }
        }
    }

    fn crf_values(scores: &Tensor, trans: &Tensor, tags: &[usize]) -> (f64, f64, f64) {
        let mut g = Graph::standalone();
        let s = g.constant(scores.clone());
        let t = g.constant(trans.clone());
        let seq = crf_sequence_score(&mut g, s, t, tags).unwrap();
        let z = crf_log_partition(&mut g, s, t).unwrap();
        let nll = crf_nll(&mut g, s, t, tags).unwrap();
        (g.scalar(seq), g.scalar(z), g.scalar(nll))
    }

    #[test]
    fn all_zero_crf_terms() {
        let scores = Tensor::zeros(&[2, 2]);
        let trans = Tensor::zeros(&[4, 4]);
        let (seq, z, nll) = crf_values(&scores, &trans, &[0, 1]);
        assert_eq!(seq, 0.0);
        assert!((z - 4f64.ln()).abs() < 1e-15);
        assert!((nll - 4f64.ln()).abs() < 1e-15);
        let (_, z1, _) = crf_values(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[5, 5]), &[2]);
        assert!((z1 - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_token_score_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scores = random(&mut rng, 1, 3);
        let trans = random(&mut rng, 5, 5);
        let (seq, _, _) = crf_values(&scores, &trans, &[1]);
        let expected = scores.get2(0, 1) + trans.get2(3, 1) + trans.get2(1, 4);
        assert!((seq - expected).abs() < 1e-15);
    }

    #[test]
    fn single_tag_sequence_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores = random(&mut rng, 4, 1);
        let trans = random(&mut rng, 3, 3);
        let (_, _, nll) = crf_values(&scores, &trans, &[0, 0, 0, 0]);
        assert!(nll.abs() < 1e-12);
    }

    #[test]
    fn out_of_range_tag_rejected() {
        let mut g = Graph::standalone();
        let s = g.constant(Tensor::zeros(&[2, 2]));
        let t = g.constant(Tensor::zeros(&[4, 4]));
        assert!(matches!(
            crf_sequence_score(&mut g, s, t, &[0, 2]),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn viterbi_follows_dominant_tag() {
        let mut scores = Tensor::zeros(&[4, 3]);
        for i in 0..4 {
            scores.data_mut()[i * 3 + 2] = 5.0;
        }
        let (path, score) = viterbi_decode(&scores, &Tensor::zeros(&[5, 5]));
        assert_eq!(path, vec![2, 2, 2, 2]);
        assert_eq!(score, 20.0);
    }

    #[test]
    fn viterbi_ties_go_to_lowest_index() {
        let (path, score) = viterbi_decode(&Tensor::zeros(&[3, 4]), &Tensor::zeros(&[6, 6]));
        assert_eq!(path, vec![0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn softmax_loss_cases() {
        let mut g = Graph::standalone();
        let s = g.constant(Tensor::zeros(&[3, 4]));
        let l = softmax_tag_loss(&mut g, s, &[0, 1, 3]).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-15);

        let s = g.constant(Tensor::row(vec![20.0, 0.0, 0.0]));
        let l = softmax_tag_loss(&mut g, s, &[0]).unwrap();
        assert!(g.scalar(l) < 1e-8);

        let x = [[0.5, -1.0, 2.0], [1.5, 0.0, -0.5]];
        let s = g.constant(Tensor::matrix(2, 3, x.concat()).unwrap());
        let l = softmax_tag_loss(&mut g, s, &[2, 0]).unwrap();
        let hand = |row: &[f64; 3], k: usize| -> f64 {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            -(row[k].exp() / z).ln()
        };
        let expected = (hand(&x[0], 2) + hand(&x[1], 0)) / 2.0;
        assert!((g.scalar(l) - expected).abs() < 1e-14);
    }

    #[test]
    fn attach_labels_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let labels = LabelEmbedding::new(&mut store, 3, 2, &mut rng);
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap());
        assert_eq!(attach_labels(&mut g, h, &[0, 1], None).unwrap(), h);
        let z = attach_labels(&mut g, h, &[0, 2], Some(&labels)).unwrap();
        let (r0, r1) = (g.value(z).row_slice(0).to_vec(), g.value(z).row_slice(1).to_vec());
        assert_eq!(&r0[..2], &r1[..2]);
        assert_eq!(&r0[2..], store.value(labels.table).row_slice(0));
        assert_eq!(&r1[2..], store.value(labels.table).row_slice(2));
        assert_ne!(&r0[2..], &r1[2..]);
    }

    #[test]
    fn zero_label_rows_append_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let labels = LabelEmbedding::new(&mut store, 3, 2, &mut rng);
        store.set_value(labels.table, Tensor::zeros(&[3, 2])).unwrap();
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::row(vec![0.5, -0.5]));
        let z = attach_labels(&mut g, h, &[1], Some(&labels)).unwrap();
        assert_eq!(g.value(z).data(), &[0.5, -0.5, 0.0, 0.0]);
    }
}
