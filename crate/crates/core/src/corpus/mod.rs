//! Post ingestion, cleaning, vocabulary, deduplication and split construction.

mod dedup;
mod io;
mod splits;
mod store;
mod text;
mod vocab;

pub use dedup::{apply_image_map, dedup_images, dedup_text, jaccard, DEFAULT_IMAGE_THRESHOLD, DEFAULT_TEXT_THRESHOLD};
pub use io::{load_corpus, load_posts, save_posts, PostRecord};
pub use splits::{make_splits, CorpusSplits, SplitConfig, TaskSplit};
pub use store::{read_word_table, write_word_table, ImageFeatureStore, WordEmbeddings, FEATURE_MAGIC};
pub use text::{clean_text, CleaningConfig, IdentityLemmatizer, Lemmatizer, DEFAULT_MAX_SENTENCE_LEN};
pub use vocab::{build_vocabulary, Vocabulary, PAD_INDEX, PAD_TOKEN};

use crate::error::{Error, Result};

pub type PostId = u64;

/// One social-media post: optional text, optional image, and its author.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Post {
    pub post_id: PostId,
    pub user_id: usize,
    pub tokens: Option<Vec<String>>,
    pub image_ref: Option<String>,
}

impl Post {
    pub fn new(
        post_id: PostId,
        user_id: usize,
        tokens: Option<Vec<String>>,
        image_ref: Option<String>,
    ) -> Self {
        let tokens = tokens.filter(|t| !t.is_empty());
        Post {
            post_id,
            user_id,
            tokens,
            image_ref,
        }
    }

    pub fn has_text(&self) -> bool {
        self.tokens.is_some()
    }

    pub fn has_image(&self) -> bool {
        self.image_ref.is_some()
    }

    pub fn validate(&self, user_count: usize) -> Result<()> {
        if self.tokens.is_none() && self.image_ref.is_none() {
            return Err(Error::InvalidPost {
                post_id: self.post_id,
                reason: "neither text nor image".into(),
            });
        }
        if self.user_id >= user_count {
            return Err(Error::InvalidPost {
                post_id: self.post_id,
                reason: format!("user {} >= user count {user_count}", self.user_id),
            });
        }
        Ok(())
    }
}

/// A validated post collection. Users are numbered `0..user_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub posts: Vec<Post>,
    pub user_count: usize,
}

impl Corpus {
    /// `user_count` defaults to one past the largest user id.
    pub fn new(posts: Vec<Post>, user_count: Option<usize>) -> Result<Self> {
        let needed = posts.iter().map(|p| p.user_id + 1).max().unwrap_or(0);
        let user_count = user_count.unwrap_or(needed);
        for p in &posts {
            p.validate(user_count)?;
        }
        let mut seen = std::collections::HashSet::new();
        for p in &posts {
            if !seen.insert(p.post_id) {
                return Err(Error::InvalidPost {
                    post_id: p.post_id,
                    reason: "duplicate post id".into(),
                });
            }
        }
        Ok(Corpus { posts, user_count })
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn by_id(&self) -> std::collections::HashMap<PostId, &Post> {
        self.posts.iter().map(|p| (p.post_id, p)).collect()
    }

    /// Drops out-of-vocabulary tokens; posts left with neither text nor image
    /// are removed.
    pub fn filter_oov(&self, vocab: &Vocabulary) -> Corpus {
        let posts = self
            .posts
            .iter()
            .filter_map(|p| {
                let tokens = p.tokens.as_ref().map(|t| {
                    t.iter()
                        .filter(|w| vocab.contains(w))
                        .cloned()
                        .collect::<Vec<_>>()
                });
                let post = Post::new(p.post_id, p.user_id, tokens, p.image_ref.clone());
                (post.has_text() || post.has_image()).then_some(post)
            })
            .collect();
        Corpus {
            posts,
            user_count: self.user_count,
        }
    }
}
