//! Image, text and user encoders into the common embedding space.

mod checkpoint;
mod encoder;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{BatchEmbeddings, BatchInputs, ForwardPass, TextActivation};

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Post, Vocabulary, WordEmbeddings};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlockConfig {
    pub width: usize,
    pub filters: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Common embedding space dimension.
    pub dim: usize,
    pub image_dim: usize,
    pub word_dim: usize,
    pub user_dim: usize,
    pub conv_blocks: Vec<ConvBlockConfig>,
    pub max_sentence_len: usize,
    pub bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 1024,
            image_dim: 2048,
            word_dim: 300,
            user_dim: 300,
            conv_blocks: vec![
                ConvBlockConfig { width: 2, filters: 512 },
                ConvBlockConfig { width: 3, filters: 256 },
                ConvBlockConfig { width: 4, filters: 256 },
            ],
            max_sentence_len: 20,
            bias: true,
        }
    }
}

impl ModelConfig {
    /// Width of the concatenated pooled convolution features.
    pub fn text_feature_dim(&self) -> usize {
        self.conv_blocks.iter().map(|b| b.filters).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("dim", self.dim),
            ("image_dim", self.image_dim),
            ("word_dim", self.word_dim),
            ("user_dim", self.user_dim),
            ("max_sentence_len", self.max_sentence_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.conv_blocks.is_empty() {
            return Err(Error::InvalidConfig("no convolution blocks".into()));
        }
        for b in &self.conv_blocks {
            if b.width == 0 || b.filters == 0 || b.width > self.max_sentence_len {
                return Err(Error::InvalidConfig(format!(
                    "convolution block {b:?} incompatible with sentence length {}",
                    self.max_sentence_len
                )));
            }
        }
        Ok(())
    }
}

/// Which encoder a parameter block belongs to; the unit of freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Image,
    Text,
    User,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Linear {
    fn init<R: Rng + ?Sized>(out: usize, input: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: Matrix::uniform(out, input, bound, rng),
            bias: bias.then(|| vec![0.0; out]),
        }
    }

    fn zeros_like(&self) -> Self {
        Linear {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: self.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        if let Some(b) = &self.bias {
            crate::linalg::axpy(1.0, b, &mut y);
        }
        y
    }

    /// Accumulates parameter gradients for `y = Wx + b` given `dy`.
    fn accumulate(&self, grad: &mut Linear, x: &[f64], dy: &[f64]) {
        grad.weight.add_outer(dy, x);
        if let Some(gb) = &mut grad.bias {
            crate::linalg::axpy(1.0, dy, gb);
        }
    }
}

/// All trainable state. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub image_proj: Linear,
    /// One `filters × (width·word_dim)` filter bank per block.
    pub conv: Vec<Linear>,
    pub text_proj: Linear,
    /// `K × user_dim`, row `u` belongs to user `u`.
    pub user_table: Matrix,
    pub user_proj: Linear,
}

pub struct ParamBlock<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub values: &'a [f64],
}

pub struct ParamBlockMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub values: &'a mut [f64],
}

impl ModelParameters {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, user_count: usize, rng: &mut R) -> Self {
        let conv = config
            .conv_blocks
            .iter()
            .map(|b| Linear::init(b.filters, b.width * config.word_dim, config.bias, rng))
            .collect();
        let user_bound = 1.0 / (config.user_dim as f64).sqrt();
        ModelParameters {
            image_proj: Linear::init(config.dim, config.image_dim, config.bias, rng),
            conv,
            text_proj: Linear::init(config.dim, config.text_feature_dim(), config.bias, rng),
            user_table: Matrix::uniform(user_count, config.user_dim, user_bound, rng),
            user_proj: Linear::init(config.dim, config.user_dim, config.bias, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParameters {
            image_proj: self.image_proj.zeros_like(),
            conv: self.conv.iter().map(Linear::zeros_like).collect(),
            text_proj: self.text_proj.zeros_like(),
            user_table: Matrix::zeros(self.user_table.rows(), self.user_table.cols()),
            user_proj: self.user_proj.zeros_like(),
        }
    }

    pub fn user_count(&self) -> usize {
        self.user_table.rows()
    }

    fn linears(&self) -> Vec<(String, ParamGroup, &Linear)> {
        let mut v = vec![("image_proj".to_string(), ParamGroup::Image, &self.image_proj)];
        for (i, c) in self.conv.iter().enumerate() {
            v.push((format!("conv{i}"), ParamGroup::Text, c));
        }
        v.push(("text_proj".into(), ParamGroup::Text, &self.text_proj));
        v
    }

    /// Named parameter blocks in a fixed order (the checkpoint order).
    pub fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        for (prefix, group, lin) in self.linears() {
            out.push(ParamBlock {
                name: format!("{prefix}.weight"),
                group,
                values: lin.weight.as_slice(),
            });
            if let Some(b) = &lin.bias {
                out.push(ParamBlock {
                    name: format!("{prefix}.bias"),
                    group,
                    values: b,
                });
            }
        }
        out.push(ParamBlock {
            name: "user_table".into(),
            group: ParamGroup::User,
            values: self.user_table.as_slice(),
        });
        out.push(ParamBlock {
            name: "user_proj.weight".into(),
            group: ParamGroup::User,
            values: self.user_proj.weight.as_slice(),
        });
        if let Some(b) = &self.user_proj.bias {
            out.push(ParamBlock {
                name: "user_proj.bias".into(),
                group: ParamGroup::User,
                values: b,
            });
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut out = Vec::new();
        let ModelParameters {
            image_proj,
            conv,
            text_proj,
            user_table,
            user_proj,
        } = self;
        fn linear<'a>(out: &mut Vec<ParamBlockMut<'a>>, prefix: &str, group: ParamGroup, lin: &'a mut Linear) {
            out.push(ParamBlockMut {
                name: format!("{prefix}.weight"),
                group,
                values: lin.weight.as_mut_slice(),
            });
            if let Some(b) = &mut lin.bias {
                out.push(ParamBlockMut {
                    name: format!("{prefix}.bias"),
                    group,
                    values: b,
                });
            }
        }
        linear(&mut out, "image_proj", ParamGroup::Image, image_proj);
        for (i, c) in conv.iter_mut().enumerate() {
            linear(&mut out, &format!("conv{i}"), ParamGroup::Text, c);
        }
        linear(&mut out, "text_proj", ParamGroup::Text, text_proj);
        out.push(ParamBlockMut {
            name: "user_table".into(),
            group: ParamGroup::User,
            values: user_table.as_mut_slice(),
        });
        linear(&mut out, "user_proj", ParamGroup::User, user_proj);
        out
    }

    /// Rounds every value to the nearest `f32`, so the in-memory state equals
    /// what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for b in self.blocks_mut() {
            for x in b.values.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for b in self.blocks() {
            if b.values.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "parameter",
                    name: b.name,
                });
            }
        }
        Ok(())
    }
}

/// Parameter gradients plus the set of user rows that received gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grad: ModelParameters,
    pub touched_users: BTreeSet<usize>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParameters) -> Self {
        Gradients {
            grad: params.zeros_like(),
            touched_users: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
}

impl Model {
    /// Randomly initialized model: projections uniform in ±1/√fan_in,
    /// biases zero, user rows uniform in ±1/√user_dim.
    pub fn new(config: ModelConfig, user_count: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParameters::init(&config, user_count, &mut rng);
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParameters) -> Result<Self> {
        config.validate()?;
        let expect = ModelParameters::init(&config, params.user_count(), &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in expect.blocks().iter().zip(params.blocks()) {
            if a.name != b.name || a.values.len() != b.values.len() {
                return Err(Error::DimensionMismatch {
                    context: format!("parameter block {}", b.name),
                    expected: a.values.len(),
                    actual: b.values.len(),
                });
            }
        }
        if expect.blocks().len() != params.blocks().len() {
            return Err(Error::InvalidConfig("parameter block count mismatch".into()));
        }
        Ok(Model { config, params })
    }

    pub fn user_count(&self) -> usize {
        self.params.user_count()
    }
}

/// User rows initialized to the mean word vector over all tokens the user
/// posted. Users without text get rows uniform in ±1/√user_dim drawn from
/// `seed`.
pub fn init_user_embeddings<'a>(
    posts: impl IntoIterator<Item = &'a Post>,
    user_count: usize,
    vocab: &Vocabulary,
    words: &WordEmbeddings,
    seed: u64,
) -> Matrix {
    let dim = words.dim();
    let mut sums = Matrix::zeros(user_count, dim);
    let mut counts = vec![0usize; user_count];
    for p in posts {
        let Some(tokens) = &p.tokens else { continue };
        if p.user_id >= user_count {
            continue;
        }
        for t in tokens {
            if let Some(i) = vocab.get(t) {
                crate::linalg::axpy(1.0, words.vector(i), sums.row_mut(p.user_id));
                counts[p.user_id] += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (dim as f64).sqrt();
    for (u, &c) in counts.iter().enumerate() {
        let row = sums.row_mut(u);
        if c > 0 {
            row.iter_mut().for_each(|x| *x /= c as f64);
        } else {
            row.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn default_text_width_is_1024() {
        let c = ModelConfig::default();
        assert_eq!(c.text_feature_dim(), 512 + 256 + 256);
        assert_eq!(c.dim, 1024);
        assert_eq!(c.image_dim, 2048);
        assert_eq!(c.user_dim, 300);
    }

    #[test]
    fn block_names_and_groups() {
        let cfg = ModelConfig {
            dim: 3,
            image_dim: 2,
            word_dim: 2,
            user_dim: 2,
            conv_blocks: vec![ConvBlockConfig { width: 2, filters: 2 }],
            max_sentence_len: 4,
            bias: true,
        };
        let m = Model::new(cfg, 4, 0).unwrap();
        let names: Vec<String> = m.params.blocks().into_iter().map(|b| b.name).collect();
        assert_eq!(
            names,
            [
                "image_proj.weight",
                "image_proj.bias",
                "conv0.weight",
                "conv0.bias",
                "text_proj.weight",
                "text_proj.bias",
                "user_table",
                "user_proj.weight",
                "user_proj.bias"
            ]
        );
        let mut p = m.params.clone();
        let mut_names: Vec<String> = p.blocks_mut().into_iter().map(|b| b.name).collect();
        assert_eq!(names, mut_names);
    }

    fn words_for(vocab: &Vocabulary) -> WordEmbeddings {
        let table: HashMap<String, Vec<f64>> = [
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 2.0]),
            ("c".to_string(), vec![3.0, 4.0]),
        ]
        .into_iter()
        .collect();
        WordEmbeddings::for_vocabulary(vocab, &table, 2)
    }

    #[test]
    fn user_init_is_mean_word_vector() {
        let vocab = Vocabulary::from_words(["a", "b", "c"]);
        let words = words_for(&vocab);
        let posts = vec![
            Post::new(0, 0, Some(vec!["a".into()]), None),
            Post::new(1, 1, Some(vec!["a".into(), "b".into()]), None),
            Post::new(2, 1, Some(vec!["c".into()]), None),
            Post::new(3, 2, None, Some("img".into())),
        ];
        let t = init_user_embeddings(&posts, 3, &vocab, &words, 5);
        assert_eq!(t.row(0), &[1.0, 0.0]);
        let want = [(1.0 + 0.0 + 3.0) / 3.0, (0.0 + 2.0 + 4.0) / 3.0];
        assert!((t.row(1)[0] - want[0]).abs() < 1e-15 && (t.row(1)[1] - want[1]).abs() < 1e-15);
        let bound = 1.0 / 2f64.sqrt();
        assert!(t.row(2).iter().all(|x| x.abs() <= bound && *x != 0.0));
        let again = init_user_embeddings(&posts, 3, &vocab, &words, 5);
        assert_eq!(t, again);
    }
}
