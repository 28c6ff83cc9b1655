//! Tweet-style text cleaning.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_SENTENCE_LEN: usize = 20;

const BUILTIN_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "rt", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves",
];

/// Maps a cleaned token to its lemma.
pub trait Lemmatizer: Send + Sync {
    fn lemmatize(&self, token: &str) -> String;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityLemmatizer;

impl Lemmatizer for IdentityLemmatizer {
    fn lemmatize(&self, token: &str) -> String {
        token.to_string()
    }
}

#[derive(Clone)]
pub struct CleaningConfig {
    pub stopwords: HashSet<String>,
    pub max_sentence_len: usize,
    pub lemmatizer: Arc<dyn Lemmatizer>,
}

impl fmt::Debug for CleaningConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CleaningConfig")
            .field("stopwords", &self.stopwords.len())
            .field("max_sentence_len", &self.max_sentence_len)
            .finish_non_exhaustive()
    }
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            stopwords: BUILTIN_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            max_sentence_len: DEFAULT_MAX_SENTENCE_LEN,
            lemmatizer: Arc::new(IdentityLemmatizer),
        }
    }
}

impl CleaningConfig {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CleaningConfig {
            stopwords: words.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    /// Replaces the stopword list with the whitespace-separated words in `path`.
    pub fn load_stopwords(mut self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.stopwords = text.split_whitespace().map(str::to_lowercase).collect();
        Ok(self)
    }
}

fn clean_token(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    let (hashtag, body) = match lower.strip_prefix('#') {
        Some(rest) => (true, rest),
        None => (false, lower.as_str()),
    };
    let body: String = body.chars().filter(|c| c.is_alphanumeric()).collect();
    if body.is_empty() {
        return None;
    }
    Some(if hashtag { format!("#{body}") } else { body })
}

/// Lowercases, strips everything outside the alphanumeric class (keeping a
/// leading `#`), drops emptied tokens and stopwords, lemmatizes, and
/// truncates to `max_sentence_len`.
pub fn clean_text(raw: &str, config: &CleaningConfig) -> Vec<String> {
    let mut out = Vec::new();
    for raw_token in raw.split_whitespace() {
        if out.len() == config.max_sentence_len {
            break;
        }
        let Some(tok) = clean_token(raw_token) else {
            continue;
        };
        if config.stopwords.contains(&tok) {
            continue;
        }
        let lemma = config.lemmatizer.lemmatize(&tok);
        if !lemma.is_empty() {
            out.push(lemma);
        }
    }
    out
}
