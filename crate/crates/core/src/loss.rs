//! Cosine similarity, max-margin ranking with in-batch negatives, and the
//! weighted mixture over the three modality pairs.

use std::collections::HashMap;

use rand::Rng;

use crate::corpus::{Post, PostId};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::model::BatchEmbeddings;

/// Weights of the (text, user), (image, text) and (image, user) objectives.
/// Always a point on the probability simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub text_user: f64,
    pub image_text: f64,
    pub image_user: f64,
}

impl LossWeights {
    pub fn new(text_user: f64, image_text: f64, image_user: f64) -> Result<Self> {
        let w = [text_user, image_text, image_user];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidConfig(format!("loss weights {w:?} must be nonnegative")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "loss weights {w:?} sum to {sum}, not 1"
            )));
        }
        Ok(LossWeights {
            text_user,
            image_text,
            image_user,
        })
    }

    pub fn get(&self, kind: PairKind) -> f64 {
        match kind {
            PairKind::TextUser => self.text_user,
            PairKind::ImageText => self.image_text,
            PairKind::ImageUser => self.image_user,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.text_user, self.image_text, self.image_user]
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            text_user: 0.1,
            image_text: 0.45,
            image_user: 0.45,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairKind {
    TextUser,
    ImageText,
    ImageUser,
}

impl PairKind {
    pub const ALL: [PairKind; 3] = [PairKind::TextUser, PairKind::ImageText, PairKind::ImageUser];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginConfig {
    pub margin: f64,
    /// Cap on negatives per anchor; `None` uses every valid in-batch item.
    pub max_negatives: Option<usize>,
    /// Also rank in the mirrored direction (e.g. user anchor, text negatives).
    pub bidirectional: bool,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            margin: 0.2,
            max_negatives: None,
            bidirectional: false,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::InvalidConfig(format!("margin {} must be > 0", self.margin)));
        }
        if self.max_negatives == Some(0) {
            return Err(Error::InvalidConfig("max_negatives must be at least 1".into()));
        }
        Ok(())
    }
}

/// A content slot (text or image) in a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    /// Position of the source post in the batch.
    pub batch_index: usize,
    pub post_id: PostId,
    pub user_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub anchor: usize,
    pub positive: usize,
}

/// Slots and valid (anchor, positive) pairs of one minibatch. Text and image
/// slots follow batch order; there is one user slot per distinct user, in
/// order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchPairs {
    pub texts: Vec<Slot>,
    pub images: Vec<Slot>,
    pub users: Vec<usize>,
    /// text slot → user slot
    pub text_user: Vec<Pair>,
    /// image slot → text slot
    pub image_text: Vec<Pair>,
    /// image slot → user slot
    pub image_user: Vec<Pair>,
}

impl BatchPairs {
    pub fn from_posts(posts: &[&Post]) -> Self {
        let mut b = BatchPairs::default();
        let mut user_slot: HashMap<usize, usize> = HashMap::new();
        for (i, p) in posts.iter().enumerate() {
            let slot = Slot {
                batch_index: i,
                post_id: p.post_id,
                user_id: p.user_id,
            };
            let u = *user_slot.entry(p.user_id).or_insert_with(|| {
                b.users.push(p.user_id);
                b.users.len() - 1
            });
            let t = p.has_text().then(|| {
                b.texts.push(slot);
                b.texts.len() - 1
            });
            let im = p.has_image().then(|| {
                b.images.push(slot);
                b.images.len() - 1
            });
            if let Some(t) = t {
                b.text_user.push(Pair { anchor: t, positive: u });
            }
            if let Some(im) = im {
                if let Some(t) = t {
                    b.image_text.push(Pair { anchor: im, positive: t });
                }
                b.image_user.push(Pair { anchor: im, positive: u });
            }
        }
        b
    }

    /// Layout for fused-content training: one content slot per post stored
    /// in the text slots, paired with its user; no image pairs.
    pub fn merged(posts: &[&Post]) -> Self {
        let mut b = BatchPairs::default();
        let mut user_slot: HashMap<usize, usize> = HashMap::new();
        for (i, p) in posts.iter().enumerate() {
            let u = *user_slot.entry(p.user_id).or_insert_with(|| {
                b.users.push(p.user_id);
                b.users.len() - 1
            });
            b.texts.push(Slot {
                batch_index: i,
                post_id: p.post_id,
                user_id: p.user_id,
            });
            b.text_user.push(Pair {
                anchor: b.texts.len() - 1,
                positive: u,
            });
        }
        b
    }

    pub fn pairs(&self, kind: PairKind) -> &[Pair] {
        match kind {
            PairKind::TextUser => &self.text_user,
            PairKind::ImageText => &self.image_text,
            PairKind::ImageUser => &self.image_user,
        }
    }

    /// (N_TU, N_IT, N_IU)
    pub fn counts(&self) -> [usize; 3] {
        [self.text_user.len(), self.image_text.len(), self.image_user.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Modality {
    Text,
    Image,
    User,
}

/// Anchor and target modalities of a pair kind in a given direction.
fn roles(kind: PairKind, reverse: bool) -> (Modality, Modality) {
    let (a, b) = match kind {
        PairKind::TextUser => (Modality::Text, Modality::User),
        PairKind::ImageText => (Modality::Image, Modality::Text),
        PairKind::ImageUser => (Modality::Image, Modality::User),
    };
    if reverse {
        (b, a)
    } else {
        (a, b)
    }
}

/// Target-modality slots usable as negatives for `pair`: every slot of the
/// target modality whose identity differs from the positive's. Users are
/// identified by user id; content by post id, or by author when the anchor
/// is a user. With `max_negatives` set, a uniform sample of that size is
/// drawn from `rng`.
pub fn sample_in_batch_negatives<R: Rng + ?Sized>(
    batch: &BatchPairs,
    kind: PairKind,
    pair: Pair,
    reverse: bool,
    max_negatives: Option<usize>,
    rng: &mut R,
) -> Vec<usize> {
    let (anchor_mod, target_mod) = roles(kind, reverse);
    let (anchor, positive) = if reverse {
        (pair.positive, pair.anchor)
    } else {
        (pair.anchor, pair.positive)
    };
    let content = |m: Modality| match m {
        Modality::Text => &batch.texts,
        Modality::Image => &batch.images,
        Modality::User => unreachable!(),
    };
    let mut out: Vec<usize> = match target_mod {
        Modality::User => {
            let pos_user = batch.users[positive];
            (0..batch.users.len())
                .filter(|&s| batch.users[s] != pos_user)
                .collect()
        }
        m if anchor_mod == Modality::User => {
            let anchor_user = batch.users[anchor];
            let slots = content(m);
            (0..slots.len())
                .filter(|&s| slots[s].user_id != anchor_user)
                .collect()
        }
        m => {
            let slots = content(m);
            let pos_post = slots[positive].post_id;
            (0..slots.len())
                .filter(|&s| slots[s].post_id != pos_post)
                .collect()
        }
    };
    if let Some(cap) = max_negatives {
        if out.len() > cap {
            let mut picked: Vec<usize> = rand::seq::index::sample(rng, out.len(), cap).into_vec();
            picked.sort_unstable();
            out = picked.into_iter().map(|i| out[i]).collect();
        }
    }
    out
}

/// `a·b / (|a||b|)`
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine similarity".into(),
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector("cosine similarity"));
    }
    Ok(dot(a, b) / (na * nb))
}

struct Normed {
    unit: Vec<f64>,
    norm: f64,
}

fn normed(v: &[f64], what: &'static str) -> Result<Normed> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector(what));
    }
    Ok(Normed {
        unit: v.iter().map(|x| x / n).collect(),
        norm: n,
    })
}

/// `grad += scale · ∂cos(a, b)/∂a`
fn add_cos_grad(a: &Normed, b: &Normed, cos: f64, scale: f64, grad: &mut [f64]) {
    let k = scale / a.norm;
    for ((g, bu), au) in grad.iter_mut().zip(&b.unit).zip(&a.unit) {
        *g += k * (bu - cos * au);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingLoss {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// `Σ_n max(0, m − S(a, p) + S(a, n))` and its gradients. Inactive hinge
/// terms (including those exactly at zero) contribute no gradient.
pub fn pair_ranking_loss(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    margin: f64,
) -> Result<RankingLoss> {
    let a = normed(anchor, "ranking anchor")?;
    let p = normed(positive, "ranking positive")?;
    let negs = negatives
        .iter()
        .map(|n| normed(n, "ranking negative"))
        .collect::<Result<Vec<_>>>()?;
    let mut out = RankingLoss {
        loss: 0.0,
        grad_anchor: vec![0.0; anchor.len()],
        grad_positive: vec![0.0; positive.len()],
        grad_negatives: negatives.iter().map(|n| vec![0.0; n.len()]).collect(),
    };
    rank_one(
        &a,
        &p,
        negs.iter().zip(out.grad_negatives.iter_mut()),
        margin,
        1.0,
        &mut out.loss,
        &mut out.grad_anchor,
        &mut out.grad_positive,
    );
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn rank_one<'n, I>(
    a: &Normed,
    p: &Normed,
    negatives: I,
    margin: f64,
    scale: f64,
    loss: &mut f64,
    grad_a: &mut [f64],
    grad_p: &mut [f64],
) where
    I: Iterator<Item = (&'n Normed, &'n mut Vec<f64>)>,
{
    let s_pos = dot(&a.unit, &p.unit);
    let mut active = 0usize;
    for (n, grad_n) in negatives {
        let s_neg = dot(&a.unit, &n.unit);
        let h = margin - s_pos + s_neg;
        if h > 0.0 {
            *loss += h;
            active += 1;
            add_cos_grad(a, n, s_neg, scale, grad_a);
            add_cos_grad(n, a, s_neg, scale, grad_n);
        }
    }
    if active > 0 {
        let c = -(active as f64) * scale;
        add_cos_grad(a, p, s_pos, c, grad_a);
        add_cos_grad(p, a, s_pos, c, grad_p);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLoss {
    pub value: f64,
    /// Unnormalized sum of hinge terms per pair kind; `None` when the term
    /// was dropped (zero weight or no valid pairs).
    pub terms: [Option<f64>; 3],
    pub grads: BatchEmbeddings,
}

/// `Σ_k λ_k / N_k · L_k` over the pair kinds with nonzero weight and at
/// least one valid pair.
pub fn mixture_loss<R: Rng + ?Sized>(
    emb: &BatchEmbeddings,
    batch: &BatchPairs,
    weights: &LossWeights,
    margin: &MarginConfig,
    rng: &mut R,
) -> Result<MixtureLoss> {
    margin.validate()?;
    let counts = batch.counts();
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Empty("minibatch has no valid pairs"));
    }
    let active: Vec<(usize, PairKind)> = PairKind::ALL
        .iter()
        .enumerate()
        .filter(|(k, kind)| weights.get(**kind) > 0.0 && counts[*k] > 0)
        .map(|(k, kind)| (k, *kind))
        .collect();

    let needs = |m: Modality| {
        active.iter().any(|(_, kind)| {
            let (a, b) = roles(*kind, false);
            a == m || b == m
        })
    };
    let norm_all = |vs: &[Vec<f64>], on: bool, what| -> Result<Vec<Normed>> {
        if !on {
            return Ok(Vec::new());
        }
        vs.iter().map(|v| normed(v, what)).collect()
    };
    let texts = norm_all(&emb.text, needs(Modality::Text), "text embedding")?;
    let images = norm_all(&emb.image, needs(Modality::Image), "image embedding")?;
    let users = norm_all(&emb.user, needs(Modality::User), "user embedding")?;

    let mut grads = BatchEmbeddings::zeros_like(emb);
    let mut value = 0.0;
    let mut terms = [None; 3];
    let directions: &[bool] = if margin.bidirectional { &[false, true] } else { &[false] };

    for (k, kind) in active {
        let scale = weights.get(kind) / counts[k] as f64;
        let mut term = 0.0;
        for &pair in batch.pairs(kind) {
            for &reverse in directions {
                let (am, tm) = roles(kind, reverse);
                let (ai, pi) = if reverse {
                    (pair.positive, pair.anchor)
                } else {
                    (pair.anchor, pair.positive)
                };
                let negs =
                    sample_in_batch_negatives(batch, kind, pair, reverse, margin.max_negatives, rng);
                if negs.is_empty() {
                    continue;
                }
                let pick = |m: Modality| match m {
                    Modality::Text => &texts,
                    Modality::Image => &images,
                    Modality::User => &users,
                };
                let (a_set, t_set) = (pick(am), pick(tm));
                let mut ga = vec![0.0; a_set[ai].unit.len()];
                let mut gp = vec![0.0; t_set[pi].unit.len()];
                let mut gn: Vec<Vec<f64>> = negs.iter().map(|_| vec![0.0; gp.len()]).collect();
                let mut l = 0.0;
                rank_one(
                    &a_set[ai],
                    &t_set[pi],
                    negs.iter().map(|&n| &t_set[n]).zip(gn.iter_mut()),
                    margin.margin,
                    scale,
                    &mut l,
                    &mut ga,
                    &mut gp,
                );
                term += l;
                add_into(&mut grads, am, ai, &ga);
                add_into(&mut grads, tm, pi, &gp);
                for (&n, g) in negs.iter().zip(&gn) {
                    add_into(&mut grads, tm, n, g);
                }
            }
        }
        value += scale * term;
        terms[k] = Some(term);
    }
    Ok(MixtureLoss {
        value,
        terms,
        grads,
    })
}

fn add_into(grads: &mut BatchEmbeddings, m: Modality, slot: usize, g: &[f64]) {
    let target = match m {
        Modality::Text => &mut grads.text[slot],
        Modality::Image => &mut grads.image[slot],
        Modality::User => &mut grads.user[slot],
    };
    axpy(1.0, g, target);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn post(id: u64, user: usize, text: bool, image: bool) -> Post {
        Post::new(
            id,
            user,
            text.then(|| vec![format!("w{id}")]),
            image.then(|| format!("i{id}")),
        )
    }

    fn random_embeddings(b: &BatchPairs, dim: usize, rng: &mut ChaCha8Rng) -> BatchEmbeddings {
        let mut v = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        BatchEmbeddings {
            text: v(b.texts.len()),
            image: v(b.images.len()),
            user: v(b.users.len()),
        }
    }

    fn batch(seed: u64, n: usize) -> Vec<Post> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n as u64)
            .map(|i| {
                let text = rng.random_bool(0.7);
                let image = !text || rng.random_bool(0.5);
                post(i, rng.random_range(0..4), text, image)
            })
            .collect()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector(_))));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn ranking_loss_hand_values() {
        // S(a,p) = 1, S(a,n) = 0: satisfied margin, no loss
        let r = pair_ranking_loss(&[1.0, 0.0], &[2.0, 0.0], &[&[0.0, 1.0]], 0.2).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad_anchor.iter().all(|&g| g == 0.0));
        // S(a,p) = 0, S(a,n) = 1: loss m + 1
        let r = pair_ranking_loss(&[1.0, 0.0], &[0.0, 1.0], &[&[1.0, 0.0]], 0.2).unwrap();
        assert!((r.loss - 1.2).abs() < 1e-15);
    }

    #[test]
    fn pairs_and_negatives() {
        let posts = [post(0, 0, true, true), post(1, 1, true, false), post(2, 0, false, true), post(3, 2, true, true)];
        let refs: Vec<&Post> = posts.iter().collect();
        let b = BatchPairs::from_posts(&refs);
        assert_eq!(b.counts(), [3, 2, 3]);
        assert_eq!(b.users, vec![0, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // text of post 0 (user 0): negatives are users 1 and 2
        let n = sample_in_batch_negatives(&b, PairKind::TextUser, b.text_user[0], false, None, &mut rng);
        assert_eq!(n, vec![1, 2]);
        // image of post 0: negatives are the texts of posts 1 and 3
        let n = sample_in_batch_negatives(&b, PairKind::ImageText, b.image_text[0], false, None, &mut rng);
        assert_eq!(n, vec![1, 2]);
        // reverse user anchor (user 0): texts not written by user 0
        let n = sample_in_batch_negatives(&b, PairKind::TextUser, b.text_user[0], true, None, &mut rng);
        assert_eq!(n, vec![1, 2]);
        let n = sample_in_batch_negatives(&b, PairKind::TextUser, b.text_user[0], false, Some(1), &mut rng);
        assert_eq!(n.len(), 1);
    }

    #[test]
    fn weights_validated() {
        assert!(LossWeights::new(0.1, 0.45, 0.45).is_ok());
        assert!(LossWeights::new(0.5, 0.6, 0.0).is_err());
        assert!(LossWeights::new(-0.1, 0.6, 0.5).is_err());
        assert!(LossWeights::new(f64::NAN, 0.5, 0.5).is_err());
    }

    #[test]
    fn missing_images_drop_terms() {
        let posts: Vec<Post> = (0..6).map(|i| post(i, i as usize % 3, true, false)).collect();
        let refs: Vec<&Post> = posts.iter().collect();
        let b = BatchPairs::from_posts(&refs);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_embeddings(&b, 5, &mut rng);
        let l = mixture_loss(&e, &b, &LossWeights::default(), &MarginConfig::default(), &mut rng).unwrap();
        assert!(l.value.is_finite());
        assert!(l.terms[0].is_some() && l.terms[1].is_none() && l.terms[2].is_none());

        let none = BatchPairs::default();
        let empty = BatchEmbeddings::default();
        assert!(mixture_loss(&empty, &none, &LossWeights::default(), &MarginConfig::default(), &mut rng).is_err());
    }

    fn finite_difference_check(seed: u64, bidirectional: bool) {
        let posts = batch(seed, 8);
        let refs: Vec<&Post> = posts.iter().collect();
        let b = BatchPairs::from_posts(&refs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_embeddings(&b, 4, &mut rng);
        let w = LossWeights::new(0.2, 0.5, 0.3).unwrap();
        let m = MarginConfig {
            margin: 0.2,
            max_negatives: None,
            bidirectional,
        };
        let f = |e: &BatchEmbeddings| mixture_loss(e, &b, &w, &m, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let base = f(&e);
        let h = 1e-6;
        for which in 0..3 {
            let n = [e.text.len(), e.image.len(), e.user.len()][which];
            for s in 0..n {
                for j in 0..4 {
                    let bump = |d: f64| {
                        let mut x = e.clone();
                        [&mut x.text, &mut x.image, &mut x.user][which][s][j] += d;
                        f(&x).value
                    };
                    let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                    let analytic = [&base.grads.text, &base.grads.image, &base.grads.user][which][s][j];
                    let scale = numeric.abs().max(analytic.abs()).max(1e-3);
                    assert!(
                        (numeric - analytic).abs() / scale < 1e-5,
                        "seed {seed} modality {which} slot {s} dim {j}: {numeric} vs {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            finite_difference_check(seed, false);
            finite_difference_check(seed, true);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn nonnegative_scale_and_permutation_invariant(seed in any::<u64>(), n in 2usize..12, scale in 0.01f64..100.0) {
            let posts = batch(seed, n);
            let refs: Vec<&Post> = posts.iter().collect();
            let b = BatchPairs::from_posts(&refs);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_embeddings(&b, 3, &mut rng);
            let w = LossWeights::default();
            let m = MarginConfig::default();
            let base = mixture_loss(&e, &b, &w, &m, &mut rng).unwrap();
            prop_assert!(base.value >= 0.0);

            let mut scaled = e.clone();
            for v in scaled.text.iter_mut().chain(scaled.image.iter_mut()).chain(scaled.user.iter_mut()) {
                v.iter_mut().for_each(|x| *x *= scale);
            }
            let s = mixture_loss(&scaled, &b, &w, &m, &mut rng).unwrap();
            prop_assert!((s.value - base.value).abs() <= 1e-12 * base.value.max(1.0));

            // reversed batch order, embeddings permuted to match the new slots
            let rev: Vec<&Post> = refs.iter().rev().copied().collect();
            let rb = BatchPairs::from_posts(&rev);
            let find = |slots: &[Slot], src: &[Vec<f64>], target: &[Slot]| -> Vec<Vec<f64>> {
                target
                    .iter()
                    .map(|t| src[slots.iter().position(|x| x.post_id == t.post_id).unwrap()].clone())
                    .collect()
            };
            let re = BatchEmbeddings {
                text: find(&b.texts, &e.text, &rb.texts),
                image: find(&b.images, &e.image, &rb.images),
                user: rb
                    .users
                    .iter()
                    .map(|u| e.user[b.users.iter().position(|x| x == u).unwrap()].clone())
                    .collect(),
            };
            let r = mixture_loss(&re, &rb, &w, &m, &mut rng).unwrap();
            prop_assert!((r.value - base.value).abs() <= 1e-12 * base.value.max(1.0));
        }

        #[test]
        fn zero_iff_all_margins_met(seed in any::<u64>()) {
            let posts = batch(seed, 6);
            let refs: Vec<&Post> = posts.iter().collect();
            let b = BatchPairs::from_posts(&refs);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_embeddings(&b, 3, &mut rng);
            let w = LossWeights::default();
            let m = MarginConfig::default();
            let l = mixture_loss(&e, &b, &w, &m, &mut rng).unwrap();
            let mut violated = false;
            for (k, kind) in PairKind::ALL.into_iter().enumerate() {
                if l.terms[k].is_none() {
                    continue;
                }
                let (am, tm) = roles(kind, false);
                let get = |md: Modality| match md {
                    Modality::Text => &e.text,
                    Modality::Image => &e.image,
                    Modality::User => &e.user,
                };
                for &p in b.pairs(kind) {
                    let a = &get(am)[p.anchor];
                    let sp = cosine_similarity(a, &get(tm)[p.positive]).unwrap();
                    for n in sample_in_batch_negatives(&b, kind, p, false, None, &mut rng) {
                        let sn = cosine_similarity(a, &get(tm)[n]).unwrap();
                        violated |= sp < sn + m.margin;
                    }
                }
            }
            prop_assert_eq!(l.value == 0.0, !violated);
        }
    }
}
