use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Corpus, CorpusSplits, ImageFeatureStore, PostId, Vocabulary, WordEmbeddings};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalized, Matrix};
use crate::loss::{LossWeights, PairKind};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RetrievalKind {
    TextToUser,
    ImageToText,
    ImageToUser,
}

impl RetrievalKind {
    pub const ALL: [RetrievalKind; 3] = [
        RetrievalKind::TextToUser,
        RetrievalKind::ImageToText,
        RetrievalKind::ImageToUser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RetrievalKind::TextToUser => "text-to-user",
            RetrievalKind::ImageToText => "image-to-text",
            RetrievalKind::ImageToUser => "image-to-user",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The training objective over the same modality pair.
    pub fn pair_kind(self) -> PairKind {
        match self {
            RetrievalKind::TextToUser => PairKind::TextUser,
            RetrievalKind::ImageToText => PairKind::ImageText,
            RetrievalKind::ImageToUser => PairKind::ImageUser,
        }
    }
}

impl std::str::FromStr for RetrievalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RetrievalKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown retrieval task {s:?}")))
    }
}

/// Queries ranked against a gallery; `ground_truth[q]` lists the gallery
/// indices that count as correct for query `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalTask {
    pub kind: RetrievalKind,
    pub queries: Vec<Vec<f64>>,
    pub query_ids: Vec<String>,
    pub gallery: Vec<Vec<f64>>,
    pub gallery_ids: Vec<String>,
    pub ground_truth: Vec<Vec<usize>>,
}

impl RetrievalTask {
    pub fn validate(&self) -> Result<()> {
        if self.queries.is_empty() {
            return Err(Error::Empty("retrieval queries"));
        }
        if self.gallery.is_empty() {
            return Err(Error::Empty("retrieval gallery"));
        }
        if self.ground_truth.len() != self.queries.len() {
            return Err(Error::DimensionMismatch {
                context: format!("{} ground truth", self.kind.name()),
                expected: self.queries.len(),
                actual: self.ground_truth.len(),
            });
        }
        let dim = self.gallery[0].len();
        for v in self.queries.iter().chain(&self.gallery) {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("{} embeddings", self.kind.name()),
                    expected: dim,
                    actual: v.len(),
                });
            }
        }
        for gt in &self.ground_truth {
            if gt.is_empty() {
                return Err(Error::Empty("query ground truth"));
            }
            if let Some(&bad) = gt.iter().find(|&&g| g >= self.gallery.len()) {
                return Err(Error::OutOfRange {
                    what: "gallery",
                    index: bad,
                    size: self.gallery.len(),
                });
            }
        }
        Ok(())
    }

    /// Cosine similarity of query `q` against every gallery item. Zero
    /// vectors score 0 against everything.
    pub fn scores(&self, q: usize) -> Vec<f64> {
        let unit = |v: &[f64]| normalized(v).unwrap_or_else(|| vec![0.0; v.len()]);
        let qv = unit(&self.queries[q]);
        self.gallery.iter().map(|g| dot(&qv, &unit(g))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskResult {
    pub mean_median_rank: f64,
    pub gallery_size: usize,
    pub queries: usize,
}

impl TaskResult {
    /// Mean median rank divided by gallery size.
    pub fn normalized(&self) -> f64 {
        self.mean_median_rank / self.gallery_size as f64
    }

    /// Expected mean median rank of uniformly random scores.
    pub fn random_baseline(&self) -> f64 {
        (self.gallery_size as f64 + 1.0) / 2.0
    }
}

/// 1-based rank of `scores[target]` under descending order; tied items share
/// the mean rank of their block.
pub fn mid_rank(scores: &[f64], target: usize) -> f64 {
    let s = scores[target];
    let (mut greater, mut equal) = (0usize, 0usize);
    for &x in scores {
        if x > s {
            greater += 1;
        } else if x == s {
            equal += 1;
        }
    }
    1.0 + greater as f64 + (equal as f64 - 1.0) / 2.0
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median over the mid-ranks of the ground-truth items of one query.
pub fn query_median_rank(scores: &[f64], ground_truth: &[usize]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("retrieval gallery"));
    }
    if ground_truth.is_empty() {
        return Err(Error::Empty("query ground truth"));
    }
    let mut ranks = Vec::with_capacity(ground_truth.len());
    for &g in ground_truth {
        if g >= scores.len() {
            return Err(Error::OutOfRange {
                what: "gallery",
                index: g,
                size: scores.len(),
            });
        }
        ranks.push(mid_rank(scores, g));
    }
    Ok(median(&mut ranks))
}

pub fn mean_median_rank(task: &RetrievalTask) -> Result<f64> {
    task.validate()?;
    let mut total = 0.0;
    for (q, gt) in task.ground_truth.iter().enumerate() {
        total += query_median_rank(&task.scores(q), gt)?;
    }
    Ok(total / task.queries.len() as f64)
}

pub fn evaluate_task(task: &RetrievalTask) -> Result<TaskResult> {
    Ok(TaskResult {
        mean_median_rank: mean_median_rank(task)?,
        gallery_size: task.gallery.len(),
        queries: task.queries.len(),
    })
}

/// Per-task results of one evaluation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalReport {
    pub text_to_user: Option<TaskResult>,
    pub image_to_text: Option<TaskResult>,
    pub image_to_user: Option<TaskResult>,
}

impl RetrievalReport {
    pub fn tasks(&self) -> [Option<&TaskResult>; 3] {
        [
            self.text_to_user.as_ref(),
            self.image_to_text.as_ref(),
            self.image_to_user.as_ref(),
        ]
    }

    pub fn get(&self, kind: RetrievalKind) -> Option<&TaskResult> {
        self.tasks()[kind.index()]
    }

    pub fn set(&mut self, kind: RetrievalKind, result: TaskResult) {
        let slot = match kind {
            RetrievalKind::TextToUser => &mut self.text_to_user,
            RetrievalKind::ImageToText => &mut self.image_to_text,
            RetrievalKind::ImageToUser => &mut self.image_to_user,
        };
        *slot = Some(result);
    }

    /// Sum of normalized ranks over the tasks whose weight is nonzero.
    pub fn weighted_score(&self, weights: &LossWeights) -> Result<f64> {
        let mut score = 0.0;
        for kind in RetrievalKind::ALL {
            if weights.get(kind.pair_kind()) > 0.0 {
                let t = self.get(kind).ok_or(Error::MissingTask(kind.name()))?;
                score += t.normalized();
            }
        }
        Ok(score)
    }
}

/// Sum of normalized mean median ranks over all three tasks.
pub fn joint_normalized_metric(report: &RetrievalReport) -> Result<f64> {
    let mut total = 0.0;
    for kind in RetrievalKind::ALL {
        total += report.get(kind).ok_or(Error::MissingTask(kind.name()))?.normalized();
    }
    Ok(total)
}

/// Maps posts and users into a common space for retrieval.
pub trait Embedder {
    fn embed_text(&self, tokens: &[String]) -> Result<Vec<f64>>;
    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>>;
    fn embed_user(&self, user: usize) -> Result<Vec<f64>>;
    fn user_count(&self) -> usize;
}

/// Resources shared by every embedder: vocabulary, word vectors and image
/// features.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub vocab: &'a Vocabulary,
    pub words: &'a WordEmbeddings,
    pub images: &'a ImageFeatureStore,
}

impl Resources<'_> {
    pub fn image(&self, image_ref: &str) -> Result<&[f64]> {
        self.images.get(image_ref).ok_or_else(|| Error::DanglingImage {
            post_id: 0,
            image_ref: image_ref.to_string(),
        })
    }
}

pub struct ModelEmbedder<'a> {
    pub model: &'a Model,
    pub resources: Resources<'a>,
}

impl Embedder for ModelEmbedder<'_> {
    fn embed_text(&self, tokens: &[String]) -> Result<Vec<f64>> {
        let idx = self.resources.vocab.encode(tokens);
        self.model.encode_text(&idx, self.resources.words)
    }

    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        self.model.encode_image(self.resources.image(image_ref)?)
    }

    fn embed_user(&self, user: usize) -> Result<Vec<f64>> {
        self.model.encode_user(user)
    }

    fn user_count(&self) -> usize {
        self.model.user_count()
    }
}

/// Non-learned representations: texts as mean word vectors, images as raw
/// features, users as rows of a fixed table.
pub struct BaselineEmbedder<'a> {
    pub users: &'a Matrix,
    pub resources: Resources<'a>,
}

impl Embedder for BaselineEmbedder<'_> {
    fn embed_text(&self, tokens: &[String]) -> Result<Vec<f64>> {
        let idx = self.resources.vocab.encode(tokens);
        Ok(self
            .resources
            .words
            .mean_of(idx)
            .unwrap_or_else(|| vec![0.0; self.resources.words.dim()]))
    }

    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        Ok(self.resources.image(image_ref)?.to_vec())
    }

    fn embed_user(&self, user: usize) -> Result<Vec<f64>> {
        if user >= self.users.rows() {
            return Err(Error::OutOfRange {
                what: "user",
                index: user,
                size: self.users.rows(),
            });
        }
        Ok(self.users.row(user).to_vec())
    }

    fn user_count(&self) -> usize {
        self.users.rows()
    }
}

fn all_users<E: Embedder + ?Sized>(embedder: &E) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let n = embedder.user_count();
    let vecs = (0..n).map(|u| embedder.embed_user(u)).collect::<Result<Vec<_>>>()?;
    Ok((vecs, (0..n).map(|u| u.to_string()).collect()))
}

/// Builds one retrieval task from the listed posts.
///
/// * text-to-user: each post's text against all users.
/// * image-to-text: each post's image against the texts of the listed posts.
/// * image-to-user: each distinct image against all users; every user who
///   posted it is a correct answer.
pub fn build_task<E: Embedder + ?Sized>(
    kind: RetrievalKind,
    embedder: &E,
    corpus: &Corpus,
    ids: &[PostId],
) -> Result<RetrievalTask> {
    let by_id = corpus.by_id();
    let mut posts = Vec::with_capacity(ids.len());
    for id in ids {
        let p = by_id.get(id).ok_or(Error::InvalidPost {
            post_id: *id,
            reason: "listed in split but missing from corpus".into(),
        })?;
        posts.push(*p);
    }
    let need_text = matches!(kind, RetrievalKind::TextToUser | RetrievalKind::ImageToText);
    let need_image = matches!(kind, RetrievalKind::ImageToText | RetrievalKind::ImageToUser);
    for p in &posts {
        if (need_text && !p.has_text()) || (need_image && !p.has_image()) {
            return Err(Error::InvalidPost {
                post_id: p.post_id,
                reason: format!("lacks a modality required by {}", kind.name()),
            });
        }
    }

    let mut task = RetrievalTask {
        kind,
        queries: Vec::new(),
        query_ids: Vec::new(),
        gallery: Vec::new(),
        gallery_ids: Vec::new(),
        ground_truth: Vec::new(),
    };
    match kind {
        RetrievalKind::TextToUser => {
            (task.gallery, task.gallery_ids) = all_users(embedder)?;
            for p in posts {
                task.queries.push(embedder.embed_text(p.tokens.as_deref().unwrap_or_default())?);
                task.query_ids.push(p.post_id.to_string());
                task.ground_truth.push(vec![p.user_id]);
            }
        }
        RetrievalKind::ImageToText => {
            for (i, p) in posts.iter().enumerate() {
                task.queries.push(embedder.embed_image(p.image_ref.as_deref().unwrap_or_default())?);
                task.query_ids.push(p.image_ref.clone().unwrap_or_default());
                task.gallery.push(embedder.embed_text(p.tokens.as_deref().unwrap_or_default())?);
                task.gallery_ids.push(p.post_id.to_string());
                task.ground_truth.push(vec![i]);
            }
        }
        RetrievalKind::ImageToUser => {
            (task.gallery, task.gallery_ids) = all_users(embedder)?;
            let mut groups: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
            for p in &posts {
                groups
                    .entry(p.image_ref.as_deref().unwrap_or_default())
                    .or_default()
                    .insert(p.user_id);
            }
            for (image, users) in groups {
                task.queries.push(embedder.embed_image(image)?);
                task.query_ids.push(image.to_string());
                task.ground_truth.push(users.into_iter().collect());
            }
        }
    }
    task.validate()?;
    Ok(task)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Validation,
    Test,
}

impl std::str::FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" | "val" => Ok(SplitPart::Validation),
            "test" => Ok(SplitPart::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split {s:?}"))),
        }
    }
}

/// Evaluates the requested tasks on one part of the splits. Tasks whose
/// split list is empty are left out of the report.
pub fn evaluate_retrieval<E: Embedder + ?Sized>(
    embedder: &E,
    corpus: &Corpus,
    splits: &CorpusSplits,
    part: SplitPart,
    kinds: &[RetrievalKind],
) -> Result<RetrievalReport> {
    let mut report = RetrievalReport::default();
    for &kind in kinds {
        let split = match kind {
            RetrievalKind::TextToUser => &splits.text_to_user,
            RetrievalKind::ImageToText => &splits.image_to_text,
            RetrievalKind::ImageToUser => &splits.image_to_user,
        };
        let ids = match part {
            SplitPart::Validation => &split.validation,
            SplitPart::Test => &split.test,
        };
        if ids.is_empty() {
            continue;
        }
        let task = build_task(kind, embedder, corpus, ids)?;
        report.set(kind, evaluate_task(&task)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn task(queries: Vec<Vec<f64>>, gallery: Vec<Vec<f64>>, gt: Vec<Vec<usize>>) -> RetrievalTask {
        RetrievalTask {
            kind: RetrievalKind::TextToUser,
            query_ids: (0..queries.len()).map(|i| i.to_string()).collect(),
            gallery_ids: (0..gallery.len()).map(|i| i.to_string()).collect(),
            queries,
            gallery,
            ground_truth: gt,
        }
    }

    #[test]
    fn tied_pair_gets_mid_rank() {
        let scores = [0.9, 0.8, 0.8, 0.1];
        assert_eq!(mid_rank(&scores, 1), 2.5);
        assert_eq!(mid_rank(&scores, 2), 2.5);
        assert_eq!(mid_rank(&scores, 0), 1.0);
        assert_eq!(mid_rank(&scores, 3), 4.0);
    }

    #[test]
    fn perfect_retrieval_is_one() {
        let t = task(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 2.0], vec![3.0, 0.1], vec![-1.0, -1.0]],
            vec![vec![1], vec![0]],
        );
        assert_eq!(mean_median_rank(&t).unwrap(), 1.0);
    }

    #[test]
    fn multi_truth_median() {
        assert_eq!(query_median_rank(&[0.5, 0.4, 0.3, 0.2], &[0, 3, 1]).unwrap(), 2.0);
        assert_eq!(query_median_rank(&[0.5, 0.4, 0.3, 0.2], &[0, 3]).unwrap(), 2.5);
    }

    #[test]
    fn empty_inputs_rejected() {
        let t = task(vec![], vec![vec![1.0]], vec![]);
        assert!(matches!(mean_median_rank(&t), Err(Error::Empty(_))));
        let t = task(vec![vec![1.0]], vec![], vec![vec![0]]);
        assert!(matches!(mean_median_rank(&t), Err(Error::Empty(_))));
        let t = task(vec![vec![1.0]], vec![vec![1.0]], vec![vec![3]]);
        assert!(matches!(mean_median_rank(&t), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn joint_metric_check_value() {
        let r = |m, g| TaskResult {
            mean_median_rank: m,
            gallery_size: g,
            queries: 1,
        };
        let report = RetrievalReport {
            text_to_user: Some(r(551.0, 39808)),
            image_to_text: Some(r(127.0, 5000)),
            image_to_user: Some(r(785.0, 39808)),
        };
        let j = joint_normalized_metric(&report).unwrap();
        assert!((j - 0.05896).abs() < 5e-6, "{j}");

        let best = RetrievalReport {
            text_to_user: Some(r(1.0, 10)),
            image_to_text: Some(r(1.0, 4)),
            image_to_user: Some(r(1.0, 5)),
        };
        assert!((joint_normalized_metric(&best).unwrap() - (0.1 + 0.25 + 0.2)).abs() < 1e-15);
        let worst = RetrievalReport {
            text_to_user: Some(r(10.0, 10)),
            image_to_text: Some(r(4.0, 4)),
            image_to_user: Some(r(5.0, 5)),
        };
        assert_eq!(joint_normalized_metric(&worst).unwrap(), 3.0);

        let partial = RetrievalReport {
            image_to_text: None,
            ..report
        };
        assert!(matches!(
            joint_normalized_metric(&partial),
            Err(Error::MissingTask("image-to-text"))
        ));
    }

    #[test]
    fn weighted_score_skips_zero_weights() {
        let r = |m| TaskResult {
            mean_median_rank: m,
            gallery_size: 100,
            queries: 1,
        };
        let report = RetrievalReport {
            text_to_user: Some(r(10.0)),
            image_to_text: None,
            image_to_user: Some(r(30.0)),
        };
        let w = LossWeights::new(0.5, 0.0, 0.5).unwrap();
        assert!((report.weighted_score(&w).unwrap() - 0.4).abs() < 1e-15);
        let w = LossWeights::new(0.5, 0.5, 0.0).unwrap();
        assert!(report.weighted_score(&w).is_err());
    }

    #[test]
    fn random_scores_near_half_gallery() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 1000;
        let mut total = 0.0;
        for _ in 0..600 {
            let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            total += query_median_rank(&scores, &[rng.random_range(0..n)]).unwrap();
        }
        let mmr = total / 600.0;
        assert!((0.45 * n as f64..=0.55 * n as f64).contains(&mmr), "{mmr}");
    }

    proptest! {
        #[test]
        fn monotone_transform_and_order_free(
            scores in proptest::collection::vec(-4i32..4, 2..30),
            pick in 0usize..1000,
            perm_seed in any::<u64>(),
        ) {
            let s: Vec<f64> = scores.iter().map(|&x| x as f64 / 4.0).collect();
            let gt = vec![pick % s.len()];
            let base = query_median_rank(&s, &gt).unwrap();
            let transformed: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(query_median_rank(&transformed, &gt).unwrap(), base);

            let mut order: Vec<usize> = (0..s.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let permuted: Vec<f64> = order.iter().map(|&i| s[i]).collect();
            let new_gt = order.iter().position(|&i| i == gt[0]).unwrap();
            prop_assert_eq!(query_median_rank(&permuted, &[new_gt]).unwrap(), base);
            prop_assert!(base >= 1.0 && base <= s.len() as f64);
        }
    }
}
