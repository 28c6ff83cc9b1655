use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::store::ImageFeatureStore;
use super::text::{clean_text, CleaningConfig};
use super::{Corpus, Post, PostId};

/// One line of the posts file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: PostId,
    pub user_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl From<&Post> for PostRecord {
    fn from(p: &Post) -> Self {
        PostRecord {
            post_id: p.post_id,
            user_id: p.user_id,
            text: p.tokens.as_ref().map(|t| t.join(" ")),
            image_ref: p.image_ref.clone(),
        }
    }
}

/// Reads and cleans a posts file. Records whose text cleans to nothing and
/// that carry no image are dropped; records with neither field are errors.
pub fn load_posts(path: &Path, cleaning: &CleaningConfig) -> Result<Vec<Post>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut posts = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            message,
        };
        let rec: PostRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("malformed record: {e}")))?;
        if rec.text.is_none() && rec.image_ref.is_none() {
            return Err(parse_err(format!(
                "post {} has neither text nor image_ref",
                rec.post_id
            )));
        }
        let tokens = rec.text.as_deref().map(|t| clean_text(t, cleaning));
        let post = Post::new(rec.post_id, rec.user_id, tokens, rec.image_ref);
        if post.has_text() || post.has_image() {
            posts.push(post);
        }
    }
    Ok(posts)
}

pub fn save_posts(path: &Path, posts: &[Post]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in posts {
        let line = serde_json::to_string(&PostRecord::from(p)).expect("post record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads posts and image features, rejecting posts that reference images
/// absent from the feature store.
pub fn load_corpus(
    posts_path: &Path,
    features_path: &Path,
    cleaning: &CleaningConfig,
    user_count: Option<usize>,
) -> Result<(Corpus, ImageFeatureStore)> {
    let store = ImageFeatureStore::load(features_path)?;
    let posts = load_posts(posts_path, cleaning)?;
    for p in &posts {
        if let Some(r) = &p.image_ref {
            if !store.contains(r) {
                return Err(Error::DanglingImage {
                    post_id: p.post_id,
                    image_ref: r.clone(),
                });
            }
        }
    }
    Ok((Corpus::new(posts, user_count)?, store))
}
