use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use jointembed::corpus::{
    build_vocabulary, load_corpus, read_word_table, CleaningConfig, Corpus, CorpusSplits, ImageFeatureStore,
    Vocabulary, WordEmbeddings,
};
use jointembed::eval::Resources;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const IMAGES_FILE: &str = "images.bin";
pub const VECTORS_FILE: &str = "vectors.txt";
pub const SPLITS_DIR: &str = "splits";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_SETTINGS: &str = "train.conf";
pub const RETRIEVAL_CSV: &str = "retrieval.csv";
pub const INTEREST_CSV: &str = "interests.csv";
pub const CLUSTER_REPORT: &str = "clusters.txt";

/// Layout of a run directory; each stage reads what earlier stages wrote.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        RunDir { root: root.to_path_buf() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))
    }

    pub fn load_data(&self) -> Result<Data> {
        // the stored corpus is already cleaned; only the length cap matters here
        let cleaning = CleaningConfig::with_stopwords(Vec::<String>::new());
        let (corpus, images) = load_corpus(&self.path(CORPUS_FILE), &self.path(IMAGES_FILE), &cleaning, None)
            .context("loading ingested corpus (run `ingest` first)")?;
        let (dim, table) = read_word_table(&self.path(VECTORS_FILE))?;
        let vocab = build_vocabulary(&corpus.posts, 1).retain(|w| table.contains_key(w));
        let words = WordEmbeddings::for_vocabulary(&vocab, &table, dim);
        Ok(Data {
            corpus,
            images,
            vocab,
            words,
        })
    }

    pub fn load_splits(&self) -> Result<CorpusSplits> {
        CorpusSplits::load(&self.path(SPLITS_DIR)).context("loading splits (run `split` first)")
    }
}

pub struct Data {
    pub corpus: Corpus,
    pub images: ImageFeatureStore,
    pub vocab: Vocabulary,
    pub words: WordEmbeddings,
}

impl Data {
    pub fn resources(&self) -> Resources<'_> {
        Resources {
            vocab: &self.vocab,
            words: &self.words,
            images: &self.images,
        }
    }
}
