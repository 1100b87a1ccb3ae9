//! Relation extraction as multi-head selection.
//!
//! Every token `i` scores every candidate head `j` under every relation
//! label `k`; probabilities are independent sigmoids, so a token may keep
//! several `(head, label)` pairs.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::encoder::glorot_uniform;
use crate::error::{Error, Result};
use crate::tagger::Activation;

/// The reserved no-relation label. A token without relations selects
/// itself with this label.
pub const NO_RELATION: &str = "N";

/// Relation labels with `N` at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationLabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationLabelSet {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = RelationLabelSet {
            labels: Vec::new(),
            index: HashMap::new(),
        };
        set.push(NO_RELATION);
        for l in labels {
            set.push(l.as_ref());
        }
        set
    }

    fn push(&mut self, label: &str) {
        if !self.index.contains_key(label) {
            self.index.insert(label.to_string(), self.labels.len());
            self.labels.push(label.to_string());
        }
    }

    /// Rebuild from [`RelationLabelSet::labels`] output.
    pub fn from_labels(labels: &[String]) -> Result<Self> {
        if labels.first().map(String::as_str) != Some(NO_RELATION) {
            return Err(Error::VocabularyMismatch("relation labels must start with N".into()));
        }
        let set = Self::new(&labels[1..]);
        if set.len() != labels.len() {
            return Err(Error::VocabularyMismatch("duplicate relation label".into()));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn no_relation(&self) -> usize {
        0
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Gold `(head token, label)` pairs per token, each set sorted and
/// non-empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadTargets {
    pub heads: Vec<Vec<(usize, usize)>>,
}

impl HeadTargets {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        let n = self.heads.len();
        for pairs in &self.heads {
            if pairs.is_empty() {
                return Err(Error::InvalidTensor("token without head targets".into()));
            }
            for &(j, k) in pairs {
                if j >= n {
                    return Err(Error::OutOfRange {
                        context: "head target token",
                        index: j,
                        len: n,
                    });
                }
                if k >= num_labels {
                    return Err(Error::OutOfRange {
                        context: "head target label",
                        index: k,
                        len: num_labels,
                    });
                }
            }
        }
        Ok(())
    }

    /// Flat indices into an `n x n x |R|` score tensor.
    fn flat_indices(&self, num_labels: usize) -> Vec<usize> {
        let n = self.heads.len();
        self.heads
            .iter()
            .enumerate()
            .flat_map(|(i, pairs)| pairs.iter().map(move |&(j, k)| (i * n + j) * num_labels + k))
            .collect()
    }
}

/// `s(z_j, z_i, r_k) = f(z_j U + z_i W + b) v_k`, with `j` the candidate
/// head and `i` the dependent token.
#[derive(Clone, Debug)]
pub struct RelScorer {
    pub head_proj: ParamId,
    pub dep_proj: ParamId,
    pub bias: ParamId,
    pub out_proj: ParamId,
    pub activation: Activation,
    pub num_labels: usize,
}

impl RelScorer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input: usize,
        width: usize,
        num_labels: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        RelScorer {
            head_proj: store.add("rel.head_proj", glorot_uniform(rng, input, width)),
            dep_proj: store.add("rel.dep_proj", glorot_uniform(rng, input, width)),
            bias: store.add("rel.bias", Tensor::zeros(&[1, width])),
            out_proj: store.add("rel.out_proj", glorot_uniform(rng, width, num_labels)),
            activation,
            num_labels,
        }
    }

    /// Score tensor of shape `[n, n, |R|]`; entry `[i, j, k]` scores token
    /// `j` as a head of token `i` under label `k`.
    pub fn pair_scores(&self, g: &mut Graph<'_>, z: Var) -> Result<Var> {
        let n = g.value(z).rows();
        let u = g.param(self.head_proj);
        let w = g.param(self.dep_proj);
        let b = g.param(self.bias);
        let v = g.param(self.out_proj);
        let as_head = g.matmul(z, u)?;
        let as_dep = g.matmul(z, w)?;
        let head_rows: Vec<usize> = (0..n).flat_map(|_| 0..n).collect();
        let dep_rows: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, n)).collect();
        let heads = g.gather_rows(as_head, &head_rows)?;
        let deps = g.gather_rows(as_dep, &dep_rows)?;
        let pre = g.add(heads, deps)?;
        let pre = g.add(pre, b)?;
        let act = self.activation.apply(g, pre);
        let s = g.matmul(act, v)?;
        g.reshape(s, &[n, n, self.num_labels])
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.head_proj, self.dep_proj, self.bias, self.out_proj]
    }
}

/// `σ(S)`, entrywise and unnormalized.
pub fn head_label_prob(g: &mut Graph<'_>, scores: Var) -> Var {
    g.sigmoid(scores)
}

fn score_dims(g: &Graph<'_>, scores: Var, targets: &HeadTargets) -> Result<(usize, usize)> {
    let shape = g.shape(scores);
    if shape.len() != 3 || shape[0] != shape[1] || shape[0] != targets.len() {
        return Err(Error::Shape {
            op: "relation scores",
            left: shape.to_vec(),
            right: vec![targets.len()],
        });
    }
    let r = shape[2];
    targets.validate(r)?;
    Ok((shape[0], r))
}

/// Binary cross-entropy over every `(i, j, k)` entry, summed:
/// `Σ softplus(S) - Σ_{gold} S`.
pub fn rel_loss(g: &mut Graph<'_>, scores: Var, targets: &HeadTargets) -> Result<Var> {
    let (_, r) = score_dims(g, scores, targets)?;
    let all = g.softplus(scores);
    let all = g.sum(all);
    let gold = g.gather_elems(scores, &targets.flat_indices(r))?;
    let gold = g.sum(gold);
    g.sub(all, gold)
}

/// Every `(j, k)` with `P[i, j, k] >= threshold`, sorted; an empty set
/// falls back to the single most probable pair.
pub fn threshold_decode(probs: &Tensor, threshold: f64) -> Vec<Vec<(usize, usize)>> {
    let shape = probs.shape();
    let (n, r) = (shape[0], shape[2]);
    (0..n)
        .map(|i| {
            let row = probs.row_slice(i);
            let mut picked: Vec<(usize, usize)> = row
                .iter()
                .enumerate()
                .filter(|(_, &p)| p >= threshold)
                .map(|(flat, _)| (flat / r, flat % r))
                .collect();
            if picked.is_empty() {
                let flat = crate::tagger::argmax(row);
                picked.push((flat / r, flat % r));
            }
            picked
        })
        .collect()
}

/// Softmax over all `n * |R|` joint outcomes per token, summed over tokens.
pub fn single_head_loss(g: &mut Graph<'_>, scores: Var, targets: &HeadTargets) -> Result<Var> {
    let (_, r) = score_dims(g, scores, targets)?;
    if let Some((token, pairs)) = targets.heads.iter().enumerate().find(|(_, p)| p.len() != 1) {
        return Err(Error::NotSingleHead {
            token,
            count: pairs.len(),
        });
    }
    let lse = g.log_sum_exp_rows(scores);
    let lse = g.sum(lse);
    let gold = g.gather_elems(scores, &targets.flat_indices(r))?;
    let gold = g.sum(gold);
    g.sub(lse, gold)
}

/// Most probable `(head, label)` per token.
pub fn single_head_decode(scores: &Tensor) -> Vec<(usize, usize)> {
    let r = scores.shape()[2];
    (0..scores.rows())
        .map(|i| {
            let flat = crate::tagger::argmax(scores.row_slice(i));
            (flat / r, flat % r)
        })
        .collect()
}

/// `L_NER + L_rel`.
pub fn joint_loss(g: &mut Graph<'_>, ner: Var, rel: Var) -> Result<Var> {
    g.add(ner, rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    fn self_n(n: usize) -> HeadTargets {
        HeadTargets {
            heads: (0..n).map(|i| vec![(i, 0)]).collect(),
        }
    }

    #[test]
    fn label_set_reserves_n() {
        let set = RelationLabelSet::new(["Works_for", "N", "Lives_in"]);
        assert_eq!(set.labels(), &["N", "Works_for", "Lives_in"]);
        assert_eq!(set.no_relation(), 0);
        assert!(RelationLabelSet::from_labels(&["Works_for".into()]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_scores_and_half_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let rel = RelScorer::new(&mut store, 3, 4, 2, Activation::Tanh, &mut rng);
        for id in rel.params() {
            store.get_mut(id).value.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut g = Graph::new(&store);
        let z = g.constant(rand_tensor(&mut rng, &[3, 3]));
        let s = rel.pair_scores(&mut g, z).unwrap();
        assert_eq!(g.shape(s), &[3, 3, 2]);
        assert!(g.value(s).data().iter().all(|&x| x == 0.0));
        let p = head_label_prob(&mut g, s);
        assert!(g.value(p).data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn single_token_has_only_self_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let rel = RelScorer::new(&mut store, 3, 4, 3, Activation::Tanh, &mut rng);
        let mut g = Graph::new(&store);
        let z = g.constant(rand_tensor(&mut rng, &[1, 3]));
        let s = rel.pair_scores(&mut g, z).unwrap();
        assert_eq!(g.shape(s), &[1, 1, 3]);
    }

    #[test]
    fn pair_scores_match_direct_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let rel = RelScorer::new(&mut store, 3, 4, 2, Activation::Tanh, &mut rng);
        store.set_value(rel.bias, rand_tensor(&mut rng, &[1, 4])).unwrap();
        let z = rand_tensor(&mut rng, &[2, 3]);
        let (u, w, b, v) = (
            store.value(rel.head_proj),
            store.value(rel.dep_proj),
            store.value(rel.bias),
            store.value(rel.out_proj),
        );
        let mut g = Graph::new(&store);
        let zv = g.constant(z.clone());
        let s = rel.pair_scores(&mut g, zv).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut expected = 0.0;
                    for l in 0..4 {
                        let mut pre = b.get2(0, l);
                        for c in 0..3 {
                            pre += z.get2(j, c) * u.get2(c, l) + z.get2(i, c) * w.get2(c, l);
                        }
                        expected += pre.tanh() * v.get2(l, k);
                    }
                    let got = g.value(s).data()[(i * 2 + j) * 2 + k];
                    assert!((got - expected).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn probabilities_do_not_normalize() {
        let mut g = Graph::standalone();
        let s = g.constant(Tensor::filled(&[1, 1, 2], 1.0));
        let p = head_label_prob(&mut g, s);
        let total: f64 = g.value(p).data().iter().sum();
        assert!((total - 2.0 * sigmoid(1.0)).abs() < 1e-15);
        assert!((total - 1.462).abs() < 1e-3);
        let s = g.constant(Tensor::filled(&[1, 1, 1], 20.0));
        let p = head_label_prob(&mut g, s);
        assert!(g.scalar(p) >= 1.0 - 1e-8);
    }

    #[test]
    fn rel_loss_cases() {
        let mut g = Graph::standalone();
        let s = g.constant(Tensor::zeros(&[1, 1, 1]));
        let l = rel_loss(&mut g, s, &self_n(1)).unwrap();
        assert!((g.scalar(l) - 2f64.ln()).abs() < 1e-15);

        // Perfect scores, n = 2, |R| = 2.
        let targets = HeadTargets {
            heads: vec![vec![(1, 1)], vec![(1, 0)]],
        };
        let mut data = vec![-20.0; 8];
        for (i, pairs) in targets.heads.iter().enumerate() {
            for &(j, k) in pairs {
                data[(i * 2 + j) * 2 + k] = 20.0;
            }
        }
        let s = g.constant(Tensor::new(vec![2, 2, 2], data).unwrap());
        let l = rel_loss(&mut g, s, &targets).unwrap();
        assert!(g.scalar(l) <= 1e-6);
    }

    #[test]
    fn rel_loss_matches_entrywise_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores = rand_tensor(&mut rng, &[3, 3, 2]);
        let targets = HeadTargets {
            heads: vec![vec![(1, 1), (2, 1)], vec![(1, 0)], vec![(0, 1)]],
        };
        let mut expected = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..2 {
                    let p = 1.0 / (1.0 + (-scores.data()[(i * 3 + j) * 2 + k]).exp());
                    let gold = targets.heads[i].contains(&(j, k));
                    expected -= if gold { p.ln() } else { (1.0 - p).ln() };
                }
            }
        }
        let mut g = Graph::standalone();
        let s = g.constant(scores);
        let l = rel_loss(&mut g, s, &targets).unwrap();
        assert!((g.scalar(l) - expected).abs() < 1e-12);
    }

    #[test]
    fn rel_loss_rejects_bad_targets() {
        let mut g = Graph::standalone();
        let s = g.constant(Tensor::zeros(&[2, 2, 2]));
        let bad = HeadTargets {
            heads: vec![vec![(0, 0)], vec![(2, 0)]],
        };
        assert!(matches!(rel_loss(&mut g, s, &bad), Err(Error::OutOfRange { .. })));
        let bad = HeadTargets {
            heads: vec![vec![(0, 0)], vec![(1, 5)]],
        };
        assert!(matches!(rel_loss(&mut g, s, &bad), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn threshold_keeps_multiple_heads() {
        // Token 0 ("Smith") heads both token 1 (label 1) and token 2 (label 2).
        let mut p = Tensor::filled(&[3, 3, 3], 0.1);
        let at = |i: usize, j: usize, k: usize| (i * 3 + j) * 3 + k;
        p.data_mut()[at(0, 1, 1)] = 0.9;
        p.data_mut()[at(0, 2, 2)] = 0.9;
        p.data_mut()[at(1, 1, 0)] = 0.8;
        p.data_mut()[at(2, 2, 0)] = 0.8;
        let heads = threshold_decode(&p, 0.5);
        assert_eq!(heads[0], vec![(1, 1), (2, 2)]);
        assert_eq!(heads[1], vec![(1, 0)]);
        assert_eq!(heads[2], vec![(2, 0)]);
    }

    #[test]
    fn threshold_falls_back_to_argmax() {
        let mut p = Tensor::filled(&[2, 2, 2], 0.2);
        p.data_mut()[3] = 0.3;
        p.data_mut()[4] = 0.25;
        let heads = threshold_decode(&p, 0.5);
        assert_eq!(heads, vec![vec![(1, 1)], vec![(0, 0)]]);
    }

    #[test]
    fn single_head_cases() {
        let mut g = Graph::standalone();
        let s = g.constant(Tensor::zeros(&[1, 1, 2]));
        let l = single_head_loss(&mut g, s, &self_n(1)).unwrap();
        assert!((g.scalar(l) - 2f64.ln()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scores = rand_tensor(&mut rng, &[2, 2, 3]);
        let targets = HeadTargets {
            heads: vec![vec![(1, 2)], vec![(0, 1)]],
        };
        let mut expected = 0.0;
        for (i, pairs) in targets.heads.iter().enumerate() {
            let row = scores.row_slice(i);
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            let (j, k) = pairs[0];
            expected -= (row[j * 3 + k].exp() / z).ln();
        }
        let s = g.constant(scores.clone());
        let l = single_head_loss(&mut g, s, &targets).unwrap();
        assert!((g.scalar(l) - expected).abs() < 1e-13);

        let mut dominant = Tensor::zeros(&[2, 2, 3]);
        dominant.data_mut()[5] = 10.0;
        dominant.data_mut()[6 + 1] = 10.0;
        assert_eq!(single_head_decode(&dominant), vec![(1, 2), (0, 1)]);

        let multi = HeadTargets {
            heads: vec![vec![(0, 0), (1, 1)], vec![(1, 0)]],
        };
        let s = g.constant(Tensor::zeros(&[2, 2, 2]));
        assert!(matches!(
            single_head_loss(&mut g, s, &multi),
            Err(Error::NotSingleHead { token: 0, count: 2 })
        ));
    }

    #[test]
    fn joint_loss_is_unweighted_sum() {
        let mut g = Graph::standalone();
        let a = g.constant(Tensor::scalar(1.5));
        let b = g.constant(Tensor::scalar(2.5));
        let l = joint_loss(&mut g, a, b).unwrap();
        assert_eq!(g.scalar(l), 4.0);
        let z = g.constant(Tensor::scalar(0.0));
        let l = joint_loss(&mut g, z, z).unwrap();
        assert_eq!(g.scalar(l), 0.0);
    }
}
