use std::collections::{BTreeMap, HashMap};

use super::Post;

pub const PAD_TOKEN: &str = "<pad>";
pub const PAD_INDEX: usize = 0;

/// Word to index map. Index 0 is the pad token; the remaining words are
/// numbered in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<usize>,
    min_count: usize,
}

impl Vocabulary {
    fn from_counts(counts: BTreeMap<String, usize>, min_count: usize) -> Self {
        let mut words = vec![PAD_TOKEN.to_string()];
        let mut kept = vec![0];
        for (w, c) in counts {
            if c >= min_count && w != PAD_TOKEN {
                words.push(w);
                kept.push(c);
            }
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary {
            words,
            index,
            counts: kept,
            min_count,
        }
    }

    /// Rebuilds from an explicit word list (as stored on disk). The pad token is
    /// inserted at index 0 if missing.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let counts = words.into_iter().map(|w| (w.into(), 1)).collect();
        Self::from_counts(counts, 1)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, index: usize) -> usize {
        self.counts[index]
    }

    /// Drops words failing `keep` and renumbers.
    pub fn retain(&self, mut keep: impl FnMut(&str) -> bool) -> Vocabulary {
        let counts = self
            .words
            .iter()
            .zip(&self.counts)
            .skip(1)
            .filter(|(w, _)| keep(w))
            .map(|(w, &c)| (w.clone(), c))
            .collect();
        Self::from_counts(counts, self.min_count)
    }

    /// Token indices, with out-of-vocabulary tokens dropped.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.get(t)).collect()
    }
}

pub fn build_vocabulary(posts: &[Post], min_count: usize) -> Vocabulary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for tokens in posts.iter().filter_map(|p| p.tokens.as_ref()) {
        for t in tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    Vocabulary::from_counts(counts, min_count)
}
