use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Corpus, ImageFeatureStore, Vocabulary, WordEmbeddings};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    AvgText,
    AvgImage,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::AvgText => "avg-text",
            BaselineKind::AvgImage => "avg-image",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg-text" => Ok(BaselineKind::AvgText),
            "avg-image" => Ok(BaselineKind::AvgImage),
            _ => Err(Error::InvalidConfig(format!("unknown baseline {s:?}"))),
        }
    }
}

/// One row per user: the mean word vector over every in-vocabulary token
/// the user posted, or the mean feature over the user's images. Users
/// without the modality get a standard-normal vector drawn from `seed`.
pub fn baseline_user_embedding(
    corpus: &Corpus,
    kind: BaselineKind,
    vocab: &Vocabulary,
    words: &WordEmbeddings,
    images: &ImageFeatureStore,
    seed: u64,
) -> Result<Matrix> {
    let dim = match kind {
        BaselineKind::AvgText => words.dim(),
        BaselineKind::AvgImage => images.dim(),
    };
    let mut sums = Matrix::zeros(corpus.user_count, dim);
    let mut counts = vec![0usize; corpus.user_count];
    for p in &corpus.posts {
        match kind {
            BaselineKind::AvgText => {
                for i in vocab.encode(p.tokens.as_deref().unwrap_or_default()) {
                    axpy(1.0, words.vector(i), sums.row_mut(p.user_id));
                    counts[p.user_id] += 1;
                }
            }
            BaselineKind::AvgImage => {
                if let Some(r) = &p.image_ref {
                    let f = images.get(r).ok_or_else(|| Error::DanglingImage {
                        post_id: p.post_id,
                        image_ref: r.clone(),
                    })?;
                    axpy(1.0, f, sums.row_mut(p.user_id));
                    counts[p.user_id] += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (u, &c) in counts.iter().enumerate() {
        let row = sums.row_mut(u);
        if c > 0 {
            row.iter_mut().for_each(|x| *x /= c as f64);
        } else {
            row.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
        }
    }
    Ok(sums)
}

/// Projected user embeddings `x^U` for every user.
pub fn project_users(model: &Model) -> Result<Matrix> {
    let n = model.user_count();
    let mut out = Matrix::zeros(n, model.config.dim);
    for u in 0..n {
        out.row_mut(u).copy_from_slice(&model.encode_user(u)?);
    }
    Ok(out)
}
