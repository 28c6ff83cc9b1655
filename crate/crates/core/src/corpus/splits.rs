use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Corpus, Post, PostId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub validation_fraction: f64,
    /// Exact number of (image, caption) pairs in the image-to-text test list.
    pub image_text_test_count: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.20,
            validation_fraction: 0.02,
            image_text_test_count: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskSplit {
    pub validation: Vec<PostId>,
    pub test: Vec<PostId>,
}

/// Held-out post lists per retrieval task plus the shared training list.
///
/// Image-to-user lists hold every post of each held-out image; image-to-text
/// lists hold one captioned post per held-out image.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSplits {
    pub train: Vec<PostId>,
    pub text_to_user: TaskSplit,
    pub image_to_text: TaskSplit,
    pub image_to_user: TaskSplit,
}

const LISTS: [&str; 7] = [
    "train",
    "text_to_user.validation",
    "text_to_user.test",
    "image_to_text.validation",
    "image_to_text.test",
    "image_to_user.validation",
    "image_to_user.test",
];

fn partition_sizes(n: usize, config: &SplitConfig) -> (usize, usize) {
    let test = ((n as f64) * config.test_fraction).round() as usize;
    let val = ((n as f64) * config.validation_fraction).round() as usize;
    let test = test.min(n);
    (test, val.min(n - test))
}

/// Builds leak-free splits: unique images are split first, so every post of
/// a held-out image is held out; text-only posts are then split for
/// text-to-user evaluation; everything else is training data.
pub fn make_splits(corpus: &Corpus, config: &SplitConfig) -> Result<CorpusSplits> {
    if !(0.0..=1.0).contains(&config.test_fraction)
        || !(0.0..=1.0).contains(&config.validation_fraction)
        || config.test_fraction + config.validation_fraction > 1.0
    {
        return Err(Error::InvalidConfig(format!(
            "split fractions test={} validation={}",
            config.test_fraction, config.validation_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut by_image: BTreeMap<&str, Vec<&Post>> = BTreeMap::new();
    for p in &corpus.posts {
        if let Some(r) = &p.image_ref {
            by_image.entry(r.as_str()).or_default().push(p);
        }
    }
    for posts in by_image.values_mut() {
        posts.sort_by_key(|p| p.post_id);
    }
    let mut images: Vec<&str> = by_image.keys().copied().collect();
    images.shuffle(&mut rng);
    let (n_test, n_val) = partition_sizes(images.len(), config);
    let test_images = &images[..n_test];
    let val_images = &images[n_test..n_test + n_val];

    let all_posts = |imgs: &[&str]| -> Vec<PostId> {
        let mut v: Vec<PostId> = imgs
            .iter()
            .flat_map(|i| by_image[i].iter().map(|p| p.post_id))
            .collect();
        v.sort_unstable();
        v
    };
    let caption_of = |img: &str| by_image[img].iter().find(|p| p.has_text()).map(|p| p.post_id);

    let mut it_test = Vec::with_capacity(config.image_text_test_count);
    for img in test_images {
        if it_test.len() == config.image_text_test_count {
            break;
        }
        if let Some(pid) = caption_of(img) {
            it_test.push(pid);
        }
    }
    if it_test.len() < config.image_text_test_count {
        return Err(Error::InsufficientImages {
            needed: config.image_text_test_count,
            available: it_test.len(),
        });
    }
    let it_val: Vec<PostId> = val_images.iter().filter_map(|i| caption_of(i)).collect();

    let mut text_only: Vec<PostId> = corpus
        .posts
        .iter()
        .filter(|p| p.image_ref.is_none())
        .map(|p| p.post_id)
        .collect();
    text_only.sort_unstable();
    text_only.shuffle(&mut rng);
    let (t_test, t_val) = partition_sizes(text_only.len(), config);
    let mut tu_test = text_only[..t_test].to_vec();
    let mut tu_val = text_only[t_test..t_test + t_val].to_vec();
    tu_test.sort_unstable();
    tu_val.sort_unstable();

    let held_images: HashSet<&str> = test_images.iter().chain(val_images).copied().collect();
    let held_text: HashSet<PostId> = tu_test.iter().chain(&tu_val).copied().collect();
    let mut train: Vec<PostId> = corpus
        .posts
        .iter()
        .filter(|p| {
            !held_text.contains(&p.post_id)
                && p.image_ref.as_deref().is_none_or(|r| !held_images.contains(r))
        })
        .map(|p| p.post_id)
        .collect();
    train.sort_unstable();

    Ok(CorpusSplits {
        train,
        text_to_user: TaskSplit {
            validation: tu_val,
            test: tu_test,
        },
        image_to_text: TaskSplit {
            validation: it_val,
            test: it_test,
        },
        image_to_user: TaskSplit {
            validation: all_posts(val_images),
            test: all_posts(test_images),
        },
    })
}

impl CorpusSplits {
    fn lists(&self) -> [&Vec<PostId>; 7] {
        [
            &self.train,
            &self.text_to_user.validation,
            &self.text_to_user.test,
            &self.image_to_text.validation,
            &self.image_to_text.test,
            &self.image_to_user.validation,
            &self.image_to_user.test,
        ]
    }

    fn lists_mut(&mut self) -> [&mut Vec<PostId>; 7] {
        [
            &mut self.train,
            &mut self.text_to_user.validation,
            &mut self.text_to_user.test,
            &mut self.image_to_text.validation,
            &mut self.image_to_text.test,
            &mut self.image_to_user.validation,
            &mut self.image_to_user.test,
        ]
    }

    pub fn validation_ids(&self) -> HashSet<PostId> {
        [&self.text_to_user, &self.image_to_text, &self.image_to_user]
            .iter()
            .flat_map(|t| t.validation.iter().copied())
            .collect()
    }

    pub fn test_ids(&self) -> HashSet<PostId> {
        [&self.text_to_user, &self.image_to_text, &self.image_to_user]
            .iter()
            .flat_map(|t| t.test.iter().copied())
            .collect()
    }

    /// Checks that no post is in more than one of train/validation/test, that
    /// no training image appears in a held-out list, and that every id exists.
    pub fn check(&self, corpus: &Corpus) -> Result<()> {
        let posts: HashMap<PostId, &Post> = corpus.by_id();
        for list in self.lists() {
            for id in list {
                if !posts.contains_key(id) {
                    return Err(Error::InvalidConfig(format!("split references unknown post {id}")));
                }
            }
        }
        let train: HashSet<PostId> = self.train.iter().copied().collect();
        let val = self.validation_ids();
        let test = self.test_ids();
        if let Some(id) = train.intersection(&val).chain(train.intersection(&test)).next() {
            return Err(Error::InvalidConfig(format!("post {id} is both training and held out")));
        }
        if let Some(id) = val.intersection(&test).next() {
            return Err(Error::InvalidConfig(format!("post {id} is in validation and test")));
        }
        let image_of = |id: &PostId| posts[id].image_ref.as_deref();
        let train_images: HashSet<&str> = self.train.iter().filter_map(image_of).collect();
        for id in val.iter().chain(&test) {
            if let Some(img) = image_of(id) {
                if train_images.contains(img) {
                    return Err(Error::InvalidConfig(format!(
                        "image {img} of held-out post {id} also appears in training"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes one `<list>.txt` file per list into `dir`, one post id per line.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, list) in LISTS.iter().zip(self.lists()) {
            let path = dir.join(format!("{name}.txt"));
            let body: String = list.iter().map(|id| format!("{id}\n")).collect();
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut splits = CorpusSplits::default();
        for (name, list) in LISTS.iter().zip(splits.lists_mut()) {
            let path = dir.join(format!("{name}.txt"));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                list.push(line.parse().map_err(|_| Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: format!("bad post id {line:?}"),
                })?);
            }
        }
        Ok(splits)
    }
}
