//! Tree-structured relation output via Chu-Liu/Edmonds.
//!
//! Vertices are the last tokens of the predicted entities plus a virtual
//! ROOT (vertex 0). An edge `u -> v` means "`u` is the head of `v`" and is
//! weighted by the best non-`N` relation probability for that ordered pair.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::Entity;
use crate::error::{Error, Result};

pub const ROOT: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub head: usize,
    pub dependent: usize,
    pub weight: f64,
    pub label: usize,
}

/// How ROOT edges are created.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootPolicy {
    /// ROOT may head any entity, weighted by the entity's own `N`
    /// self-probability.
    #[default]
    NoRelationScore,
    /// Only entities of this type may hang from ROOT (all of them if the
    /// sentence has none of that type).
    EntityType(String),
}

/// Dense directed graph with at most one labelled edge per ordered pair.
#[derive(Clone, Debug)]
pub struct ArborGraph {
    /// Token index of vertex `v + 1`.
    pub tokens: Vec<usize>,
    weights: Vec<Vec<Option<(f64, usize)>>>,
}

impl ArborGraph {
    /// A graph with ROOT plus `tokens.len()` vertices and no edges.
    pub fn new(tokens: Vec<usize>) -> Self {
        let n = tokens.len() + 1;
        ArborGraph {
            tokens,
            weights: vec![vec![None; n]; n],
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.weights.len()
    }

    pub fn set_edge(&mut self, head: usize, dependent: usize, weight: f64, label: usize) {
        assert_ne!(head, dependent, "self-edges are not allowed");
        self.weights[head][dependent] = Some((weight, label));
    }

    pub fn edge(&self, head: usize, dependent: usize) -> Option<(f64, usize)> {
        self.weights[head][dependent]
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.weights.iter().enumerate().flat_map(|(head, row)| {
            row.iter().enumerate().filter_map(move |(dependent, e)| {
                e.map(|(weight, label)| Edge {
                    head,
                    dependent,
                    weight,
                    label,
                })
            })
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }
}

fn entity_types_allow_root(entities: &[Entity], policy: &RootPolicy) -> Vec<bool> {
    match policy {
        RootPolicy::NoRelationScore => vec![true; entities.len()],
        RootPolicy::EntityType(ty) => {
            let allowed: Vec<bool> = entities.iter().map(|e| &e.entity_type == ty).collect();
            if allowed.iter().any(|&a| a) {
                allowed
            } else {
                vec![true; entities.len()]
            }
        }
    }
}

/// Complete graph over the entities' last tokens.
///
/// `probs` is the `[n, n, |R|]` probability tensor, `probs[i, j, k]` being
/// the probability that `j` heads `i` with label `k`.
pub fn build_graph(
    entities: &[Entity],
    probs: &Tensor,
    no_relation: usize,
    policy: &RootPolicy,
) -> ArborGraph {
    let tokens: Vec<usize> = entities.iter().map(|e| e.end).collect();
    let shape = probs.shape();
    let (n, r) = (shape[0], shape[2]);
    let p = |i: usize, j: usize, k: usize| probs.data()[(i * n + j) * r + k];
    let mut graph = ArborGraph::new(tokens.clone());
    let rootable = entity_types_allow_root(entities, policy);
    for (vi, &v_tok) in tokens.iter().enumerate() {
        if rootable[vi] {
            graph.set_edge(ROOT, vi + 1, p(v_tok, v_tok, no_relation), no_relation);
        }
        for (ui, &u_tok) in tokens.iter().enumerate() {
            if ui == vi {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for k in (0..r).filter(|&k| k != no_relation) {
                let w = p(v_tok, u_tok, k);
                if best.is_none_or(|(b, _)| w > b) {
                    best = Some((w, k));
                }
            }
            if let Some((w, k)) = best {
                graph.set_edge(ui + 1, vi + 1, w, k);
            }
        }
    }
    graph
}

/// Maximum-weight spanning arborescence rooted at `root`, returned as one
/// edge per non-root vertex in vertex order.
pub fn max_arborescence(graph: &ArborGraph, root: usize) -> Result<Vec<Edge>> {
    let n = graph.num_vertices();
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !seen[v] && graph.weights[u][v].is_some() {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(v) = seen.iter().position(|&s| !s) {
        return Err(Error::Unreachable(v));
    }
    let weights: Vec<Vec<Option<f64>>> = graph
        .weights
        .iter()
        .map(|row| row.iter().map(|e| e.map(|(w, _)| w)).collect())
        .collect();
    let parents = chu_liu_edmonds(&weights, root);
    Ok(parents
        .iter()
        .enumerate()
        .filter_map(|(v, p)| {
            p.map(|u| {
                let (weight, label) = graph.weights[u][v].expect("chosen edge exists");
                Edge {
                    head: u,
                    dependent: v,
                    weight,
                    label,
                }
            })
        })
        .collect())
}

/// Sum of edge weights, accumulated in dependent order.
pub fn total_weight(edges: &[Edge]) -> f64 {
    let mut sorted: Vec<&Edge> = edges.iter().collect();
    sorted.sort_by_key(|e| e.dependent);
    sorted.iter().map(|e| e.weight).sum()
}

fn better(current: Option<f64>, candidate: f64) -> bool {
    current.is_none_or(|c| candidate > c)
}

fn chu_liu_edmonds(w: &[Vec<Option<f64>>], root: usize) -> Vec<Option<usize>> {
    let n = w.len();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for v in (0..n).filter(|&v| v != root) {
        let mut best: Option<f64> = None;
        for u in (0..n).filter(|&u| u != v) {
            if let Some(x) = w[u][v] {
                if better(best, x) {
                    best = Some(x);
                    parent[v] = Some(u);
                }
            }
        }
    }
    let Some(cycle) = find_cycle(&parent) else {
        return parent;
    };

    let mut in_cycle = vec![false; n];
    cycle.iter().for_each(|&v| in_cycle[v] = true);
    let mut map = vec![usize::MAX; n];
    let mut inverse = Vec::new();
    for v in (0..n).filter(|&v| !in_cycle[v]) {
        map[v] = inverse.len();
        inverse.push(v);
    }
    let c = inverse.len();
    let m = c + 1;
    let mut contracted = vec![vec![None; m]; m];
    // For an edge u -> cycle: which cycle vertex it enters.
    let mut enters = vec![usize::MAX; m];
    // For an edge cycle -> v: which cycle vertex it leaves from.
    let mut leaves = vec![usize::MAX; m];
    for u in 0..n {
        for v in (0..n).filter(|&v| v != u) {
            let Some(x) = w[u][v] else { continue };
            match (in_cycle[u], in_cycle[v]) {
                (false, false) => contracted[map[u]][map[v]] = Some(x),
                (false, true) => {
                    let replaced = w[parent[v].expect("cycle vertex has parent")][v].expect("edge");
                    let adjusted = x - replaced;
                    if better(contracted[map[u]][c], adjusted) {
                        contracted[map[u]][c] = Some(adjusted);
                        enters[map[u]] = v;
                    }
                }
                (true, false) => {
                    if better(contracted[c][map[v]], x) {
                        contracted[c][map[v]] = Some(x);
                        leaves[map[v]] = u;
                    }
                }
                (true, true) => {}
            }
        }
    }

    let sub = chu_liu_edmonds(&contracted, map[root]);
    let mut result = vec![None; n];
    for v in 0..n {
        if in_cycle[v] {
            result[v] = parent[v];
        } else if v != root {
            let p = sub[map[v]].expect("non-root vertex has a parent");
            result[v] = Some(if p == c { leaves[map[v]] } else { inverse[p] });
        }
    }
    let entry_head = sub[c].expect("contracted vertex has a parent");
    result[enters[entry_head]] = Some(inverse[entry_head]);
    result
}

/// Vertices of one cycle in the parent pointers, if any.
fn find_cycle(parent: &[Option<usize>]) -> Option<Vec<usize>> {
    let n = parent.len();
    // 0 = unvisited, 1 = on the current walk, 2 = finished.
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut path = Vec::new();
        let mut v = start;
        loop {
            match state[v] {
                2 => break,
                1 => {
                    let pos = path.iter().position(|&x| x == v).expect("on path");
                    return Some(path[pos..].to_vec());
                }
                _ => {}
            }
            state[v] = 1;
            path.push(v);
            match parent[v] {
                Some(p) => v = p,
                None => break,
            }
        }
        path.iter().for_each(|&x| state[x] = 2);
    }
    None
}

/// Parent pointers over vertices `0..n` form an arborescence rooted at
/// `root`: every other vertex has exactly one parent and there is no cycle.
pub fn is_arborescence(parents: &[Option<usize>], root: usize) -> bool {
    parents[root].is_none()
        && parents
            .iter()
            .enumerate()
            .all(|(v, p)| v == root || p.is_some_and(|p| p != v && p < parents.len()))
        && find_cycle(parents).is_none()
}

/// Replace the entity heads with the maximum arborescence, unless the
/// thresholded relations among entity last tokens already form a tree.
///
/// `heads[i]` holds the decoded `(head token, label)` pairs of token `i`.
/// Only last tokens of `entities` are touched; an entity hung from ROOT
/// gets the self `N` pair.
pub fn enforce_tree(
    heads: &[Vec<(usize, usize)>],
    entities: &[Entity],
    probs: &Tensor,
    no_relation: usize,
    policy: &RootPolicy,
) -> Vec<Vec<(usize, usize)>> {
    if entities.is_empty() || already_tree(heads, entities, no_relation) {
        return heads.to_vec();
    }
    let graph = build_graph(entities, probs, no_relation, policy);
    let edges = max_arborescence(&graph, ROOT).expect("complete graph is reachable");
    let mut out = heads.to_vec();
    for e in edges {
        let tok = graph.tokens[e.dependent - 1];
        out[tok] = if e.head == ROOT {
            vec![(tok, no_relation)]
        } else {
            vec![(graph.tokens[e.head - 1], e.label)]
        };
    }
    out
}

fn already_tree(heads: &[Vec<(usize, usize)>], entities: &[Entity], no_relation: usize) -> bool {
    let lasts: Vec<usize> = entities.iter().map(|e| e.end).collect();
    let vertex_of = |tok: usize| lasts.iter().position(|&t| t == tok).map(|v| v + 1);
    let mut parents = vec![None; lasts.len() + 1];
    for (vi, &tok) in lasts.iter().enumerate() {
        let mut rel_heads = heads[tok]
            .iter()
            .filter(|&&(j, k)| k != no_relation && j != tok)
            .filter_map(|&(j, _)| vertex_of(j));
        match (rel_heads.next(), rel_heads.next()) {
            (None, _) => parents[vi + 1] = Some(ROOT),
            (Some(u), None) => parents[vi + 1] = Some(u),
            (Some(_), Some(_)) => return false,
        }
    }
    is_arborescence(&parents, ROOT)
}
