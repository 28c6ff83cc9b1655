//! Seeded synthetic corpora with planted topics and per-user signal.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{save_posts, write_word_table, Corpus, ImageFeatureStore, Post, Vocabulary, WordEmbeddings};
use crate::error::{Error, Result};
use crate::eval::{InterestLabels, DEFAULT_INTEREST_CLASSES};
use crate::linalg::Matrix;

pub const POSTS_FILE: &str = "posts.jsonl";
pub const FEATURES_FILE: &str = "features.bin";
pub const WORDS_FILE: &str = "words.txt";
pub const LABELS_FILE: &str = "labels.tsv";
pub const TOPICS_FILE: &str = "topics.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub topic_count: usize,
    pub users_per_topic: usize,
    pub posts_per_user: usize,
    pub vocab_per_topic: usize,
    /// Topic-neutral words shared by all topics.
    pub common_words: usize,
    pub words_per_post: usize,
    /// Probability that a token is drawn from the common words.
    pub common_rate: f64,
    pub word_dim: usize,
    pub image_feature_dim: usize,
    pub image_missing_rate: f64,
    /// Probability that a post with an image has no text.
    pub text_missing_rate: f64,
    /// Scale of the off-topic part of each image feature.
    pub noise: f64,
    /// Weight of the user's own direction inside the image noise.
    pub user_style: f64,
    /// Spread of each user's preferences over the topic vocabulary.
    pub word_preference: f64,
    /// Scale of per-word deviation from the topic direction.
    pub word_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topic_count: 5,
            users_per_topic: 40,
            posts_per_user: 25,
            vocab_per_topic: 40,
            common_words: 20,
            words_per_post: 8,
            common_rate: 0.25,
            word_dim: 32,
            image_feature_dim: 64,
            image_missing_rate: 0.5,
            text_missing_rate: 0.1,
            noise: 0.8,
            user_style: 1.0,
            word_preference: 1.5,
            word_jitter: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.topic_count,
            self.users_per_topic,
            self.posts_per_user,
            self.vocab_per_topic,
            self.words_per_post,
            self.word_dim,
            self.image_feature_dim,
        ];
        if counts.contains(&0) {
            return Err(Error::InvalidConfig("synthetic counts must be at least 1".into()));
        }
        for (name, r) in [
            ("image_missing_rate", self.image_missing_rate),
            ("text_missing_rate", self.text_missing_rate),
            ("common_rate", self.common_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("{name} {r} outside [0, 1]")));
            }
        }
        if self.common_words == 0 && self.common_rate > 0.0 {
            return Err(Error::InvalidConfig("common_rate > 0 needs common words".into()));
        }
        for (name, x) in [
            ("noise", self.noise),
            ("user_style", self.user_style),
            ("word_preference", self.word_preference),
            ("word_jitter", self.word_jitter),
        ] {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} {x} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn user_count(&self) -> usize {
        self.topic_count * self.users_per_topic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    pub words: WordEmbeddings,
    /// Every generated word with its vector, for writing a word-vector file.
    pub word_table: Vec<(String, Vec<f64>)>,
    pub images: ImageFeatureStore,
    /// Topic of each user.
    pub topics: Vec<usize>,
    pub interests: InterestLabels,
}

/// Interest classes of a topic: `t mod 3`, plus `(t + 1) mod 3` for
/// topics from 3 on.
pub fn topic_interests(topic: usize) -> Vec<bool> {
    let mut l = vec![false; 3];
    l[topic % 3] = true;
    if topic >= 3 {
        l[(topic + 1) % 3] = true;
    }
    l
}

fn gaussian_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Users are grouped by topic (`user / users_per_topic`). Each post draws
/// tokens from its user's preferred topic words plus common words, and with
/// probability `1 - image_missing_rate` an image equal to the topic
/// direction plus `noise` times a mix of the user's direction and Gaussian
/// noise. All values are rounded to `f32`.
pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (wd, fd) = (config.word_dim, config.image_feature_dim);

    let topic_word_dirs: Vec<Vec<f64>> = (0..config.topic_count).map(|_| gaussian_unit(wd, &mut rng)).collect();
    let topic_image_dirs: Vec<Vec<f64>> = (0..config.topic_count).map(|_| gaussian_unit(fd, &mut rng)).collect();

    let mut word_table = Vec::new();
    let jitter = config.word_jitter / (wd as f64).sqrt();
    let mut topic_words: Vec<Vec<String>> = Vec::with_capacity(config.topic_count);
    for (t, dir) in topic_word_dirs.iter().enumerate() {
        let mut names = Vec::with_capacity(config.vocab_per_topic);
        for j in 0..config.vocab_per_topic {
            let mut v: Vec<f64> = dir
                .iter()
                .map(|d| d + jitter * normal(&mut rng))
                .collect();
            round_f32(&mut v);
            let name = format!("t{t}w{j}");
            word_table.push((name.clone(), v));
            names.push(name);
        }
        topic_words.push(names);
    }
    let common: Vec<String> = (0..config.common_words).map(|j| format!("c{j}")).collect();
    for name in &common {
        let mut v: Vec<f64> = (0..wd)
            .map(|_| jitter * normal(&mut rng))
            .collect();
        round_f32(&mut v);
        word_table.push((name.clone(), v));
    }

    let users = config.user_count();
    let mut topics = Vec::with_capacity(users);
    let mut posts = Vec::with_capacity(users * config.posts_per_user);
    let mut features: Vec<(String, Vec<f64>)> = Vec::new();
    let mut labels = BTreeMap::new();
    let image_sd = 1.0 / (fd as f64).sqrt();
    let mut post_id = 0u64;
    for user in 0..users {
        let topic = user / config.users_per_topic;
        topics.push(topic);
        labels.insert(user, topic_interests(topic));
        let prefs: Vec<f64> = (0..config.vocab_per_topic)
            .map(|_| (config.word_preference * normal(&mut rng)).exp())
            .collect();
        let prefs = WeightedIndex::new(&prefs).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let user_dir = gaussian_unit(fd, &mut rng);
        for _ in 0..config.posts_per_user {
            let has_image = !rng.random_bool(config.image_missing_rate);
            let has_text = !has_image || !rng.random_bool(config.text_missing_rate);
            let tokens = has_text.then(|| {
                (0..config.words_per_post)
                    .map(|_| {
                        if !common.is_empty() && rng.random_bool(config.common_rate) {
                            common[rng.random_range(0..common.len())].clone()
                        } else {
                            topic_words[topic][prefs.sample(&mut rng)].clone()
                        }
                    })
                    .collect::<Vec<_>>()
            });
            let image_ref = has_image.then(|| {
                let mut f: Vec<f64> = topic_image_dirs[topic]
                    .iter()
                    .zip(&user_dir)
                    .map(|(t, u)| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        t + config.noise * (config.user_style * u + image_sd * g)
                    })
                    .collect();
                round_f32(&mut f);
                let id = format!("img{post_id}");
                features.push((id.clone(), f));
                id
            });
            posts.push(Post::new(post_id, user, tokens, image_ref));
            post_id += 1;
        }
    }

    let corpus = Corpus::new(posts, Some(users))?;
    let vocab = Vocabulary::from_words(word_table.iter().map(|(w, _)| w.as_str()));
    let table: HashMap<String, Vec<f64>> = word_table.iter().cloned().collect();
    let words = WordEmbeddings::for_vocabulary(&vocab, &table, wd);
    let images = ImageFeatureStore::from_rows(fd, features)?;
    let classes = DEFAULT_INTEREST_CLASSES.iter().map(|s| s.to_string()).collect();
    Ok(SyntheticCorpus {
        corpus,
        vocab,
        words,
        word_table,
        images,
        topics,
        interests: InterestLabels::new(classes, labels)?,
    })
}

impl SyntheticCorpus {
    /// Writes posts, features, word vectors, interest labels and user topics
    /// under `dir` using the standard file names.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_posts(&dir.join(POSTS_FILE), &self.corpus.posts)?;
        self.images.save(&dir.join(FEATURES_FILE))?;
        write_word_table(
            &dir.join(WORDS_FILE),
            self.words.dim(),
            self.word_table.iter().map(|(w, v)| (w.as_str(), v.as_slice())),
        )?;
        self.interests.save(&dir.join(LABELS_FILE))?;
        let mut topics = String::from("user\ttopic\n");
        for (u, t) in self.topics.iter().enumerate() {
            let _ = writeln!(topics, "{u}\t{t}");
        }
        let path = dir.join(TOPICS_FILE);
        std::fs::write(&path, topics).map_err(|e| Error::io(&path, e))
    }

    /// Word-vector matrix in vocabulary order.
    pub fn word_matrix(&self) -> &Matrix {
        self.words.matrix()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::loss::cosine_similarity;

    fn small() -> SynthConfig {
        SynthConfig {
            users_per_topic: 4,
            posts_per_user: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_corpus(&small()).unwrap();
        let b = generate_synthetic_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn image_rate_within_binomial_bound() {
        let cfg = SynthConfig {
            topic_count: 5,
            users_per_topic: 20,
            posts_per_user: 100,
            image_missing_rate: 0.9,
            ..SynthConfig::default()
        };
        let s = generate_synthetic_corpus(&cfg).unwrap();
        assert_eq!(s.corpus.len(), 10_000);
        let frac = s.corpus.posts.iter().filter(|p| p.has_image()).count() as f64 / 10_000.0;
        assert!((0.08..=0.12).contains(&frac), "{frac}");
    }

    #[test]
    fn zero_noise_images_are_topic_directions() {
        let s = generate_synthetic_corpus(&SynthConfig { noise: 0.0, ..small() }).unwrap();
        let mut by_topic: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for p in &s.corpus.posts {
            let Some(r) = &p.image_ref else { continue };
            let f = s.images.get(r).unwrap();
            let t = s.topics[p.user_id];
            let first = by_topic.entry(t).or_insert_with(|| f.to_vec());
            assert_eq!(first.as_slice(), f);
            assert!((dot(f, f) - 1.0).abs() < 1e-6);
        }
        let dirs: Vec<_> = by_topic.values().collect();
        for i in 0..dirs.len() {
            for j in 0..dirs.len() {
                if i != j {
                    assert!(cosine_similarity(dirs[i], dirs[j]).unwrap() < 1.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn labels_and_files() {
        assert_eq!(topic_interests(0), vec![true, false, false]);
        assert_eq!(topic_interests(3), vec![true, true, false]);
        assert_eq!(topic_interests(4), vec![false, true, true]);
        let s = generate_synthetic_corpus(&small()).unwrap();
        assert!(s.corpus.posts.iter().all(|p| p.has_text() || p.has_image()));
        let dir = tempfile::tempdir().unwrap();
        s.write(dir.path()).unwrap();
        let back = ImageFeatureStore::load(&dir.path().join(FEATURES_FILE)).unwrap();
        assert_eq!(back, s.images);
        let (dim, table) = crate::corpus::read_word_table(&dir.path().join(WORDS_FILE)).unwrap();
        assert_eq!(dim, 32);
        assert_eq!(table["t2w3"], s.word_table.iter().find(|(w, _)| w == "t2w3").unwrap().1);
        assert_eq!(InterestLabels::load(&dir.path().join(LABELS_FILE)).unwrap(), s.interests);
    }
}
