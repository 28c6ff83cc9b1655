use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::corpus::{Corpus, CorpusSplits, Post};
use crate::error::{Error, Result};
use crate::eval::{evaluate_retrieval, ModelEmbedder, Resources, RetrievalKind, RetrievalReport, SplitPart};
use crate::loss::{mixture_loss, BatchPairs, LossWeights, MarginConfig};
use crate::model::{
    init_user_embeddings, BatchEmbeddings, BatchInputs, Checkpoint, Gradients, Model, ModelConfig,
    ParamGroup,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Joint,
    /// Text–user first, then image–text with text and user encoders frozen.
    Bridging,
    /// Text and image summed into one content embedding ranked against users.
    Merged,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Joint => "joint",
            TrainMode::Bridging => "bridging",
            TrainMode::Merged => "merged",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "bridging" => Ok(TrainMode::Bridging),
            "merged" => Ok(TrainMode::Merged),
            _ => Err(Error::InvalidConfig(format!("unknown training mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    /// Epochs per stage.
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub weights: LossWeights,
    pub margin: MarginConfig,
    pub adam: AdamConfig,
    /// Start user rows from the mean word vector of each user's training
    /// posts (needs `user_dim == word_dim`).
    pub init_users_from_words: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0005,
            decay_factor: 10.0,
            decay_every: 10,
            batch_size: 1000,
            epochs: 30,
            seed: 0,
            mode: TrainMode::Joint,
            weights: LossWeights::default(),
            margin: MarginConfig::default(),
            adam: AdamConfig::default(),
            init_users_from_words: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(self.decay_factor > 0.0) || self.decay_every == 0 {
            return bad("decay factor and period must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive");
        }
        LossWeights::new(self.weights.text_user, self.weights.image_text, self.weights.image_user)?;
        self.margin.validate()
    }

    /// Weights used to rank checkpoints.
    pub fn selection_weights(&self) -> LossWeights {
        match self.mode {
            TrainMode::Joint => self.weights,
            TrainMode::Bridging => LossWeights {
                text_user: 0.5,
                image_text: 0.5,
                image_user: 0.0,
            },
            TrainMode::Merged => LossWeights {
                text_user: 1.0 / 3.0,
                image_text: 1.0 / 3.0,
                image_user: 1.0 / 3.0,
            },
        }
    }
}

/// `lr / decay_factor^⌊epoch / decay_every⌋` for 0-based `epoch`.
pub fn learning_rate_at(config: &TrainConfig, epoch: usize) -> f64 {
    config.learning_rate / config.decay_factor.powi((epoch / config.decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub validation: RetrievalReport,
    /// Sum of normalized validation ranks over the selection tasks.
    pub score: f64,
}

/// Elementwise sum; a missing image counts as the zero vector.
pub fn fuse_sum_pool(text: &[f64], image: Option<&[f64]>) -> Result<Vec<f64>> {
    match image {
        None => Ok(text.to_vec()),
        Some(i) if i.len() != text.len() => Err(Error::DimensionMismatch {
            context: "sum pooling".into(),
            expected: text.len(),
            actual: i.len(),
        }),
        Some(i) => Ok(text.iter().zip(i).map(|(a, b)| a + b).collect()),
    }
}

/// Lowest selection score wins; ties go to the earliest checkpoint.
/// Checkpoints without metadata or lacking a needed task are skipped.
pub fn select_checkpoint<'a>(series: &'a [Checkpoint], weights: &LossWeights) -> Option<&'a Checkpoint> {
    let mut best: Option<(&Checkpoint, f64)> = None;
    for ck in series {
        let Some(meta) = &ck.meta else { continue };
        let Ok(score) = meta.validation.weighted_score(weights) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((b, s)) => {
                score < s || (score == s && meta.epoch < b.meta.as_ref().map_or(usize::MAX, |m| m.epoch))
            }
        };
        if better {
            best = Some((ck, score));
        }
    }
    best.map(|(c, _)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub stage: usize,
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub stage: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<CheckpointMeta>,
    pub epochs: Vec<EpochSummary>,
    pub log: Vec<LogRecord>,
}

/// Inputs shared by every training mode.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub corpus: &'a Corpus,
    pub splits: &'a CorpusSplits,
    pub resources: Resources<'a>,
}

/// Loss and parameter gradients of one minibatch.
pub fn batch_gradients(
    model: &Model,
    posts: &[&Post],
    resources: Resources<'_>,
    mode: TrainMode,
    weights: &LossWeights,
    margin: &MarginConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Gradients)> {
    let encode = |p: &Post| resources.vocab.encode(p.tokens.as_deref().unwrap_or_default());
    let feature = |p: &Post| -> Result<Vec<f64>> {
        let r = p.image_ref.as_deref().unwrap_or_default();
        resources
            .images
            .get(r)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::DanglingImage {
                post_id: p.post_id,
                image_ref: r.to_string(),
            })
    };

    if mode == TrainMode::Merged {
        let pairs = BatchPairs::merged(posts);
        let mut text_of = vec![None; posts.len()];
        let mut image_of = vec![None; posts.len()];
        let mut inputs = BatchInputs {
            users: pairs.users.clone(),
            ..Default::default()
        };
        for (i, p) in posts.iter().enumerate() {
            if p.has_text() {
                text_of[i] = Some(inputs.texts.len());
                inputs.texts.push(encode(p));
            }
            if p.has_image() {
                image_of[i] = Some(inputs.images.len());
                inputs.images.push(feature(p)?);
            }
        }
        let pass = model.forward(inputs, Some(resources.words))?;
        let zero = vec![0.0; model.config.dim];
        let content = (0..posts.len())
            .map(|i| {
                let t = text_of[i].map_or(zero.as_slice(), |k| pass.embeddings.text[k].as_slice());
                fuse_sum_pool(t, image_of[i].map(|k| pass.embeddings.image[k].as_slice()))
            })
            .collect::<Result<Vec<_>>>()?;
        let emb = BatchEmbeddings {
            image: Vec::new(),
            text: content,
            user: pass.embeddings.user.clone(),
        };
        let only_content = LossWeights {
            text_user: 1.0,
            image_text: 0.0,
            image_user: 0.0,
        };
        let loss = mixture_loss(&emb, &pairs, &only_content, margin, rng)?;
        let mut upstream = BatchEmbeddings::zeros_like(&pass.embeddings);
        upstream.user = loss.grads.user;
        for (i, g) in loss.grads.text.into_iter().enumerate() {
            if let Some(k) = image_of[i] {
                upstream.image[k] = g.clone();
            }
            if let Some(k) = text_of[i] {
                upstream.text[k] = g;
            }
        }
        return Ok((loss.value, model.backward(&pass, &upstream)?));
    }

    let pairs = BatchPairs::from_posts(posts);
    let inputs = BatchInputs {
        images: pairs.images.iter().map(|s| feature(posts[s.batch_index])).collect::<Result<_>>()?,
        texts: pairs.texts.iter().map(|s| encode(posts[s.batch_index])).collect(),
        users: pairs.users.clone(),
    };
    let pass = model.forward(inputs, Some(resources.words))?;
    let loss = mixture_loss(&pass.embeddings, &pairs, weights, margin, rng)?;
    Ok((loss.value, model.backward(&pass, &loss.grads)?))
}

struct Stage {
    index: usize,
    weights: LossWeights,
    frozen: Vec<ParamGroup>,
}

/// Trains from a fresh model and calls `sink` with the checkpoint of every
/// epoch. Bridging runs `epochs` epochs per stage, numbered consecutively.
pub fn train(
    data: TrainData<'_>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    let corpus = data.corpus.filter_oov(data.resources.vocab);
    let by_id = corpus.by_id();
    let train_posts: Vec<&Post> = data
        .splits
        .train
        .iter()
        .filter_map(|id| by_id.get(id).copied())
        .collect();
    if train_posts.is_empty() {
        return Err(Error::Empty("training split"));
    }

    let mut model = Model::new(model_config.clone(), data.corpus.user_count, config.seed)?;
    if config.init_users_from_words {
        if model_config.user_dim != data.resources.words.dim() {
            return Err(Error::DimensionMismatch {
                context: "user rows initialized from word vectors".into(),
                expected: model_config.user_dim,
                actual: data.resources.words.dim(),
            });
        }
        model.params.user_table = init_user_embeddings(
            train_posts.iter().copied(),
            data.corpus.user_count,
            data.resources.vocab,
            data.resources.words,
            config.seed,
        );
    }
    model.params.round_to_f32();

    let stages = match config.mode {
        TrainMode::Joint | TrainMode::Merged => vec![Stage {
            index: 0,
            weights: config.weights,
            frozen: Vec::new(),
        }],
        TrainMode::Bridging => vec![
            Stage {
                index: 0,
                weights: LossWeights::new(1.0, 0.0, 0.0)?,
                frozen: Vec::new(),
            },
            Stage {
                index: 1,
                weights: LossWeights::new(0.0, 1.0, 0.0)?,
                frozen: vec![ParamGroup::Text, ParamGroup::User],
            },
        ],
    };
    let final_stage = stages.len() - 1;
    let selection = config.selection_weights();
    let select_kinds: Vec<RetrievalKind> = RetrievalKind::ALL
        .into_iter()
        .filter(|k| selection.get(k.pair_kind()) > 0.0)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_posts.len()).collect();
    let mut history = Vec::new();
    let mut epochs = Vec::new();
    let mut log = Vec::new();
    let mut best: Option<(Checkpoint, f64)> = None;
    let mut last = None;
    let mut global_epoch = 0;

    for stage in &stages {
        let mut adam = AdamState::new(&model.params, config.adam);
        for epoch in 0..config.epochs {
            let lr = learning_rate_at(config, epoch);
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&Post> = chunk.iter().map(|&i| train_posts[i]).collect();
                let (loss, grads) = match batch_gradients(
                    &model,
                    &batch,
                    data.resources,
                    config.mode,
                    &stage.weights,
                    &config.margin,
                    &mut rng,
                ) {
                    Err(Error::Empty("minibatch has no valid pairs")) => continue,
                    other => other?,
                };
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        what: "loss",
                        name: format!("stage {} epoch {epoch} step {}", stage.index, adam.step + 1),
                    });
                }
                adam_step(&mut model.params, &grads, &mut adam, lr, &stage.frozen)?;
                model.params.round_to_f32();
                total += loss;
                batches += 1;
                log.push(LogRecord {
                    stage: stage.index,
                    epoch: global_epoch,
                    step: adam.step,
                    loss,
                    lr,
                });
            }
            if batches == 0 {
                return Err(Error::Empty("training split has no valid pairs"));
            }

            let embedder = ModelEmbedder {
                model: &model,
                resources: data.resources,
            };
            let validation =
                evaluate_retrieval(&embedder, data.corpus, data.splits, SplitPart::Validation, &select_kinds)?;
            let score = validation.weighted_score(&selection)?;
            let meta = CheckpointMeta {
                epoch: global_epoch,
                validation,
                score,
            };
            let ck = Checkpoint {
                model: model.clone(),
                adam: Some(adam.clone()),
                meta: Some(meta.clone()),
            };
            sink(&ck)?;
            epochs.push(EpochSummary {
                stage: stage.index,
                epoch: global_epoch,
                mean_loss: total / batches as f64,
                lr,
                score,
            });
            history.push(meta);
            if stage.index == final_stage && best.as_ref().is_none_or(|(_, s)| score < *s) {
                best = Some((ck.clone(), score));
            }
            last = Some(ck);
            global_epoch += 1;
        }
    }
    let best = best.map(|(c, _)| c).ok_or(Error::Empty("checkpoints"))?;
    Ok(TrainOutcome {
        best,
        last: last.ok_or(Error::Empty("checkpoints"))?,
        history,
        epochs,
        log,
    })
}
