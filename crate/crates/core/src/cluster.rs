//! k-means over user embeddings and per-cluster word/image reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::{axpy, squared_distance, Matrix};
use crate::nnindex::{Neighbor, VectorIndex};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Matrix,
    /// Cluster of each input row.
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub objective: f64,
    /// Objective after each assignment step.
    pub history: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }
}

fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = squared_distance(x, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(vectors: &Matrix, centroids: &Matrix, out: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (i, a) in out.iter_mut().enumerate() {
        let (c, d) = nearest(vectors.row(i), centroids);
        *a = c;
        total += d;
    }
    total
}

fn kmeans_pp(vectors: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = vectors.rows();
    let mut centroids = Matrix::zeros(k, vectors.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(vectors.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(vectors.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..n),
        };
        centroids.row_mut(c).copy_from_slice(vectors.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(vectors.row(i), centroids.row(c)));
        }
    }
    centroids
}

/// Lloyd iterations from a seeded k-means++ start. Stops after `max_iters`
/// updates or once the relative objective decrease drops below `tol`. A
/// cluster left empty is moved onto the point farthest from its centroid.
pub fn kmeans(vectors: &Matrix, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<ClusterModel> {
    let n = vectors.rows();
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidConfig(format!("k = {k} exceeds {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(vectors, k, &mut rng);
    let mut assignment = vec![0; n];
    let mut objective = assign(vectors, &centroids, &mut assignment);
    let mut history = vec![objective];

    for _ in 0..max_iters {
        let mut sums = Matrix::zeros(k, vectors.cols());
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            axpy(1.0, vectors.row(i), sums.row_mut(c));
            counts[c] += 1;
        }
        let mut taken = vec![false; n];
        let mut empty = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                empty.push(c);
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in empty {
            let far = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, squared_distance(vectors.row(i), centroids.row(assignment[i]))))
                .fold((0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
            taken[far.0] = true;
            centroids.row_mut(c).copy_from_slice(vectors.row(far.0));
        }
        let next = assign(vectors, &centroids, &mut assignment);
        debug_assert!(next <= objective * (1.0 + 1e-12) + 1e-300, "{next} > {objective}");
        history.push(next);
        let done = objective == 0.0 || (objective - next) / objective < tol;
        objective = next;
        if done {
            break;
        }
    }
    Ok(ClusterModel {
        centroids,
        assignment,
        objective,
        history,
    })
}

/// Fraction of points whose cluster's majority label equals their own.
pub fn purity(assignment: &[usize], labels: &[usize]) -> f64 {
    let mut table: BTreeMap<usize, HashMap<usize, usize>> = BTreeMap::new();
    for (&c, &l) in assignment.iter().zip(labels) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / assignment.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub cluster: usize,
    pub members: Vec<usize>,
    /// Word counts over the members' posts, most frequent first.
    pub words: Vec<(String, usize)>,
    /// Images closest to the centroid by cosine.
    pub images: Vec<Neighbor<String>>,
}

/// The `count` most frequent tokens in the corpus; ties broken by word.
pub fn common_words(corpus: &Corpus, count: usize) -> Vec<String> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for p in &corpus.posts {
        for t in p.tokens.iter().flatten() {
            *freq.entry(t).or_default() += 1;
        }
    }
    let mut all: Vec<(&str, usize)> = freq.into_iter().collect();
    all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    all.into_iter().take(count).map(|(w, _)| w.to_string()).collect()
}

/// Per cluster: word frequencies over member users' posts with the
/// `common_word_count` most frequent corpus words removed, and the
/// `top_images` image embeddings nearest to the centroid. Row `u` of the
/// clustered data is user `u`.
pub fn cluster_report(
    model: &ClusterModel,
    corpus: &Corpus,
    common_word_count: usize,
    top_images: usize,
    images: &VectorIndex<String>,
) -> Result<Vec<ClusterReport>> {
    let common: std::collections::HashSet<String> = common_words(corpus, common_word_count).into_iter().collect();
    let mut counts: Vec<HashMap<&str, usize>> = vec![HashMap::new(); model.k()];
    for p in &corpus.posts {
        let Some(&c) = model.assignment.get(p.user_id) else {
            continue;
        };
        for t in p.tokens.iter().flatten() {
            if !common.contains(t) {
                *counts[c].entry(t).or_default() += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(model.k());
    for (c, table) in counts.into_iter().enumerate() {
        let mut words: Vec<(String, usize)> = table.into_iter().map(|(w, n)| (w.to_string(), n)).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let members = model.members(c);
        let images = if members.is_empty() || images.is_empty() || top_images == 0 {
            Vec::new()
        } else {
            images.query_knn(model.centroids.row(c), top_images.min(images.len()))?
        };
        out.push(ClusterReport {
            cluster: c,
            members,
            words,
            images,
        });
    }
    Ok(out)
}

/// Plain-text rendering: per cluster, up to `top_words` words with counts
/// and the nearest images with similarities.
pub fn render_cluster_report(reports: &[ClusterReport], top_words: usize) -> String {
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(s, "cluster {} users={}", r.cluster, r.members.len());
        for (w, n) in r.words.iter().take(top_words) {
            let _ = writeln!(s, "  word {w} {n}");
        }
        for im in &r.images {
            let _ = writeln!(s, "  image {} {:.6}", im.id, im.score);
        }
    }
    s
}
