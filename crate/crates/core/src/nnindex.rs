//! Exact k-nearest-neighbor search over fixed-dimension vectors.
//!
//! Results are always identical to a brute-force scan, including tie order
//! (ties broken by ascending id). The optional KD-tree only prunes subtrees
//! that provably cannot contain a result, with a small slack so rounding in
//! the bound never discards a tied candidate.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::{dot, normalized, squared_distance};

const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Score is cosine similarity, higher is better.
    Cosine,
    /// Score is Euclidean distance, lower is better.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeMode {
    /// Build a tree when the dimension is small enough for it to help.
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy)]
pub struct IndexOptions {
    pub tree: TreeMode,
    pub leaf_size: usize,
}

impl Default for IndexOptions {
    fn default() -> Self {
        IndexOptions {
            tree: TreeMode::Auto,
            leaf_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<Id> {
    pub id: Id,
    pub score: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<usize>),
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone)]
pub struct VectorIndex<Id> {
    dim: usize,
    metric: Metric,
    ids: Vec<Id>,
    data: Vec<f64>,
    tree: Option<Node>,
}

/// Builds an index with default options.
pub fn build_index<Id, I>(vectors: I, metric: Metric) -> Result<VectorIndex<Id>>
where
    Id: Ord + Clone,
    I: IntoIterator<Item = (Id, Vec<f64>)>,
{
    VectorIndex::build(vectors, metric, IndexOptions::default())
}

impl<Id: Ord + Clone> VectorIndex<Id> {
    pub fn build<I>(vectors: I, metric: Metric, options: IndexOptions) -> Result<Self>
    where
        I: IntoIterator<Item = (Id, Vec<f64>)>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (id, v) in vectors {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "vector index".into(),
                    expected: d,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "value",
                    name: "indexed vector".into(),
                });
            }
            match metric {
                Metric::Cosine => match normalized(&v) {
                    Some(n) => data.extend(n),
                    None => data.extend(v),
                },
                Metric::Euclidean => data.extend(v),
            }
            ids.push(id);
        }
        let dim = match dim {
            Some(d) if d > 0 => d,
            Some(_) => return Err(Error::Empty("zero-dimensional vectors")),
            None => return Err(Error::Empty("vector index input")),
        };
        let use_tree = match options.tree {
            TreeMode::Always => true,
            TreeMode::Never => false,
            TreeMode::Auto => dim <= 24 && ids.len() > 4 * options.leaf_size,
        };
        let mut index = VectorIndex {
            dim,
            metric,
            ids,
            data,
            tree: None,
        };
        if use_tree {
            let mut all: Vec<usize> = (0..index.ids.len()).collect();
            index.tree = Some(index.build_node(&mut all, options.leaf_size.max(1)));
        }
        Ok(index)
    }

    fn build_node(&self, items: &mut [usize], leaf_size: usize) -> Node {
        if items.len() <= leaf_size {
            return Node::Leaf(items.to_vec());
        }
        // split on the dimension with the widest spread
        let mut best_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..self.dim {
            let (lo, hi) = items.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let x = self.vector(i)[d];
                (lo.min(x), hi.max(x))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            return Node::Leaf(items.to_vec());
        }
        items.sort_by(|&a, &b| {
            self.vector(a)[best_dim]
                .total_cmp(&self.vector(b)[best_dim])
                .then(a.cmp(&b))
        });
        let mid = items.len() / 2;
        let value = self.vector(items[mid])[best_dim];
        let (left, right) = items.split_at_mut(mid);
        Node::Split {
            dim: best_dim,
            value,
            left: Box::new(self.build_node(left, leaf_size)),
            right: Box::new(self.build_node(right, leaf_size)),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn has_tree(&self) -> bool {
        self.tree.is_some()
    }

    pub fn ids(&self) -> &[Id] {
        &self.ids
    }

    fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn prepare_query(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "knn query".into(),
                expected: self.dim,
                actual: q.len(),
            });
        }
        match self.metric {
            Metric::Cosine => normalized(q).ok_or(Error::ZeroVector("knn query")),
            Metric::Euclidean => Ok(q.to_vec()),
        }
    }

    fn score(&self, q: &[f64], i: usize) -> f64 {
        match self.metric {
            Metric::Cosine => dot(q, self.vector(i)),
            Metric::Euclidean => squared_distance(q, self.vector(i)).sqrt(),
        }
    }

    /// Total order: better scores first, then ascending id.
    fn rank_cmp(&self, a: (f64, usize), b: (f64, usize)) -> Ordering {
        let by_score = match self.metric {
            Metric::Cosine => b.0.total_cmp(&a.0),
            Metric::Euclidean => a.0.total_cmp(&b.0),
        };
        by_score.then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
    }

    /// Squared Euclidean radius (in storage space) beyond which no point can
    /// score as well as `score`.
    fn prune_radius_sq(&self, score: f64) -> f64 {
        match self.metric {
            Metric::Cosine => 2.0 - 2.0 * score + PRUNE_SLACK,
            Metric::Euclidean => score * score * (1.0 + PRUNE_SLACK) + PRUNE_SLACK,
        }
    }

    /// The `k` best matches for `q`, best first.
    pub fn query_knn(&self, q: &[f64], k: usize) -> Result<Vec<Neighbor<Id>>> {
        if k == 0 || k > self.len() {
            return Err(Error::OutOfRange {
                what: "k",
                index: k,
                size: self.len(),
            });
        }
        let q = self.prepare_query(q)?;
        let found = match &self.tree {
            None => {
                let mut all: Vec<(f64, usize)> =
                    (0..self.len()).map(|i| (self.score(&q, i), i)).collect();
                all.sort_by(|&a, &b| self.rank_cmp(a, b));
                all.truncate(k);
                all
            }
            Some(root) => {
                let mut best = Vec::with_capacity(k + 1);
                self.search_knn(root, &q, k, &mut best);
                best
            }
        };
        Ok(self.to_neighbors(found))
    }

    /// Every stored vector whose score is at least as good as `threshold`
    /// (cosine ≥ threshold, or distance ≤ threshold), best first.
    pub fn query_within(&self, q: &[f64], threshold: f64) -> Result<Vec<Neighbor<Id>>> {
        let q = self.prepare_query(q)?;
        let mut found = Vec::new();
        match &self.tree {
            None => {
                for i in 0..self.len() {
                    let s = self.score(&q, i);
                    if self.passes(s, threshold) {
                        found.push((s, i));
                    }
                }
            }
            Some(root) => {
                let radius = self.prune_radius_sq(threshold);
                self.search_within(root, &q, threshold, radius, &mut found);
            }
        }
        found.sort_by(|&a, &b| self.rank_cmp(a, b));
        Ok(self.to_neighbors(found))
    }

    fn passes(&self, score: f64, threshold: f64) -> bool {
        match self.metric {
            Metric::Cosine => score >= threshold,
            Metric::Euclidean => score <= threshold,
        }
    }

    fn to_neighbors(&self, found: Vec<(f64, usize)>) -> Vec<Neighbor<Id>> {
        found
            .into_iter()
            .map(|(score, i)| Neighbor {
                id: self.ids[i].clone(),
                score,
            })
            .collect()
    }

    fn search_knn(&self, node: &Node, q: &[f64], k: usize, best: &mut Vec<(f64, usize)>) {
        match node {
            Node::Leaf(items) => {
                for &i in items {
                    let cand = (self.score(q, i), i);
                    if best.len() == k && self.rank_cmp(cand, best[k - 1]) != Ordering::Less {
                        continue;
                    }
                    let pos = best
                        .binary_search_by(|probe| self.rank_cmp(*probe, cand))
                        .unwrap_or_else(|p| p);
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search_knn(near, q, k, best);
                if best.len() < k || diff * diff <= self.prune_radius_sq(best[k - 1].0) {
                    self.search_knn(far, q, k, best);
                }
            }
        }
    }

    fn search_within(
        &self,
        node: &Node,
        q: &[f64],
        threshold: f64,
        radius_sq: f64,
        found: &mut Vec<(f64, usize)>,
    ) {
        match node {
            Node::Leaf(items) => {
                for &i in items {
                    let s = self.score(q, i);
                    if self.passes(s, threshold) {
                        found.push((s, i));
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search_within(near, q, threshold, radius_sq, found);
                if diff * diff <= radius_sq {
                    self.search_within(far, q, threshold, radius_sq, found);
                }
            }
        }
    }
}
