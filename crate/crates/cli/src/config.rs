use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use jointembed::loss::{LossWeights, MarginConfig};
use jointembed::model::{ConvBlockConfig, ModelConfig};
use jointembed::optim::{TrainConfig, TrainMode};
use jointembed::synth::SynthConfig;

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "seed",
    "lambda1",
    "lambda2",
    "lambda3",
    "margin",
    "max_negatives",
    "bidirectional",
    "batch_size",
    "lr",
    "epochs",
    "decay_factor",
    "decay_every",
    "mode",
    "init_users_from_words",
    "k",
    "threshold",
    "image_threshold",
    "dim",
    "user_dim",
    "filters",
    "max_len",
    "min_count",
    "test_fraction",
    "validation_fraction",
    "image_text_test_count",
    "folds",
    "svm_c",
    "svm_iterations",
    "common_words",
    "top_words",
    "top_images",
    "topics",
    "users_per_topic",
    "posts_per_user",
    "word_dim",
    "image_dim",
];

/// Flat key/value settings: config file first, command-line overrides on top.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key=value", n + 1))?;
            s.set(k.trim(), v.trim()).with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Settings::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        if !KEYS.contains(&key) {
            bail!("unknown config key {key:?}");
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set_opt(&mut self, key: &str, value: Option<impl Display>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v),
            None => Ok(()),
        }
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| anyhow!("invalid value {v:?} for {key}: {e}")),
        }
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed", 0)
    }

    pub fn weights(&self) -> Result<LossWeights> {
        let d = LossWeights::default();
        let w = LossWeights::new(
            self.get("lambda1", d.text_user)?,
            self.get("lambda2", d.image_text)?,
            self.get("lambda3", d.image_user)?,
        )?;
        Ok(w)
    }

    pub fn margin(&self) -> Result<MarginConfig> {
        let d = MarginConfig::default();
        let max_negatives = match self.values.get("max_negatives").map(String::as_str) {
            None | Some("all") => None,
            Some(v) => Some(v.parse().map_err(|e| anyhow!("invalid max_negatives {v:?}: {e}"))?),
        };
        let m = MarginConfig {
            margin: self.get("margin", d.margin)?,
            max_negatives,
            bidirectional: self.get("bidirectional", d.bidirectional)?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let c = TrainConfig {
            learning_rate: self.get("lr", d.learning_rate)?,
            decay_factor: self.get("decay_factor", d.decay_factor)?,
            decay_every: self.get("decay_every", d.decay_every)?,
            batch_size: self.get("batch_size", d.batch_size)?,
            epochs: self.get("epochs", d.epochs)?,
            seed: self.seed()?,
            mode: self.get("mode", TrainMode::Joint)?,
            weights: self.weights()?,
            margin: self.margin()?,
            init_users_from_words: self.get("init_users_from_words", d.init_users_from_words)?,
            ..d
        };
        c.validate()?;
        Ok(c)
    }

    /// Model shape; input widths come from the data and the user width
    /// defaults to the word width.
    pub fn model_config(&self, image_dim: usize, word_dim: usize) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let conv_blocks = match self.values.get("filters") {
            None => d.conv_blocks,
            Some(spec) => parse_filters(spec)?,
        };
        let c = ModelConfig {
            dim: self.get("dim", d.dim)?,
            image_dim,
            word_dim,
            user_dim: self.get("user_dim", word_dim)?,
            conv_blocks,
            max_sentence_len: self.get("max_len", d.max_sentence_len)?,
            bias: d.bias,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let d = SynthConfig::default();
        let c = SynthConfig {
            topic_count: self.get("topics", d.topic_count)?,
            users_per_topic: self.get("users_per_topic", d.users_per_topic)?,
            posts_per_user: self.get("posts_per_user", d.posts_per_user)?,
            word_dim: self.get("word_dim", d.word_dim)?,
            image_feature_dim: self.get("image_dim", d.image_feature_dim)?,
            seed: self.seed()?,
            ..d
        };
        c.validate()?;
        Ok(c)
    }
}

/// `2:512,3:256` means a width-2 block with 512 filters and a width-3 block
/// with 256.
fn parse_filters(spec: &str) -> Result<Vec<ConvBlockConfig>> {
    spec.split(',')
        .map(|part| {
            let (w, f) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| anyhow!("filter block {part:?} is not width:count"))?;
            Ok(ConvBlockConfig {
                width: w.parse().with_context(|| format!("filter width {w:?}"))?,
                filters: f.parse().with_context(|| format!("filter count {f:?}"))?,
            })
        })
        .collect()
}
