use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use jointembed::cluster::{cluster_report, kmeans, purity, render_cluster_report, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use jointembed::corpus::{
    apply_image_map, build_vocabulary, clean_text, dedup_images, dedup_text, load_posts, make_splits,
    read_word_table, save_posts, write_word_table, CleaningConfig, Corpus, ImageFeatureStore, SplitConfig,
    DEFAULT_IMAGE_THRESHOLD, DEFAULT_TEXT_THRESHOLD,
};
use jointembed::eval::{
    baseline_user_embedding, evaluate_retrieval, interest_csv_row, interest_kv_lines, predict_user_interests,
    project_users, retrieval_csv_row, retrieval_kv_lines, BaselineEmbedder, BaselineKind, Embedder,
    InterestLabels, ModelEmbedder, RetrievalKind, SplitPart, SvmConfig, INTEREST_CSV_HEADER,
    RETRIEVAL_CSV_HEADER,
};
use jointembed::linalg::Matrix;
use jointembed::model::{load_checkpoint, save_checkpoint, Checkpoint};
use jointembed::nnindex::{build_index, Metric, Neighbor};
use jointembed::optim::{train, TrainData};
use jointembed::synth::{generate_synthetic_corpus, FEATURES_FILE, LABELS_FILE, POSTS_FILE, TOPICS_FILE, WORDS_FILE};

use crate::config::Settings;
use crate::workspace::*;

pub fn synth(run: &RunDir, settings: &Settings) -> Result<()> {
    let synth = generate_synthetic_corpus(&settings.synth_config()?)?;
    synth.write(&run.root)?;
    println!(
        "wrote {} posts by {} users, {} images, {} words to {}",
        synth.corpus.len(),
        synth.corpus.user_count,
        synth.images.len(),
        synth.vocab.len() - 1,
        run.root.display()
    );
    Ok(())
}

pub struct IngestPaths {
    pub posts: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub words: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
}

pub fn ingest(run: &RunDir, settings: &Settings, paths: &IngestPaths) -> Result<()> {
    let pick = |p: &Option<PathBuf>, default: &str| p.clone().unwrap_or_else(|| run.path(default));
    let mut cleaning = CleaningConfig {
        max_sentence_len: settings.get("max_len", jointembed::corpus::DEFAULT_MAX_SENTENCE_LEN)?,
        ..CleaningConfig::default()
    };
    if let Some(sw) = &paths.stopwords {
        cleaning = cleaning.load_stopwords(sw)?;
    }
    let posts = load_posts(&pick(&paths.posts, POSTS_FILE), &cleaning)?;
    let images = ImageFeatureStore::load(&pick(&paths.features, FEATURES_FILE))?;
    let (dim, table) = read_word_table(&pick(&paths.words, WORDS_FILE))?;

    let vocab = build_vocabulary(&posts, settings.get("min_count", 1)?).retain(|w| table.contains_key(w));
    let corpus = Corpus::new(posts, None)?.filter_oov(&vocab);
    for p in &corpus.posts {
        if let Some(r) = &p.image_ref {
            if !images.contains(r) {
                bail!("post {} references unknown image {r:?}", p.post_id);
            }
        }
    }
    run.create()?;
    save_posts(&run.path(CORPUS_FILE), &corpus.posts)?;
    images.save(&run.path(IMAGES_FILE))?;
    let rows = vocab.words().iter().skip(1).map(|w| (w.as_str(), table[w].as_slice()));
    write_word_table(&run.path(VECTORS_FILE), dim, rows)?;
    println!(
        "ingested {} posts, {} users, {} images, vocabulary {}",
        corpus.len(),
        corpus.user_count,
        images.len(),
        vocab.len() - 1
    );
    Ok(())
}

pub fn dedup(run: &RunDir, settings: &Settings) -> Result<()> {
    let data = run.load_data()?;
    let text_threshold = settings.get("threshold", DEFAULT_TEXT_THRESHOLD)?;
    let image_threshold = settings.get("image_threshold", DEFAULT_IMAGE_THRESHOLD)?;
    let index = build_index(
        data.images.iter().map(|(id, v)| (id.to_string(), v.to_vec())),
        Metric::Cosine,
    )?;
    let map = dedup_images(&data.images, &index, image_threshold)?;
    let merged_images = map.iter().filter(|(k, v)| k != v).count();
    let posts = apply_image_map(&data.corpus.posts, &map);
    let kept = dedup_text(&posts, text_threshold);
    save_posts(&run.path(CORPUS_FILE), &kept)?;
    println!(
        "merged {merged_images} near-duplicate images; removed {} of {} posts",
        posts.len() - kept.len(),
        posts.len()
    );
    Ok(())
}

pub fn split(run: &RunDir, settings: &Settings) -> Result<()> {
    let data = run.load_data()?;
    let d = SplitConfig::default();
    let cfg = SplitConfig {
        test_fraction: settings.get("test_fraction", d.test_fraction)?,
        validation_fraction: settings.get("validation_fraction", d.validation_fraction)?,
        image_text_test_count: settings.get("image_text_test_count", d.image_text_test_count)?,
        seed: settings.seed()?,
    };
    let splits = make_splits(&data.corpus, &cfg)?;
    splits.save(&run.path(SPLITS_DIR))?;
    println!(
        "train {}; text-to-user {}/{}; image-to-text {}/{}; image-to-user {}/{} (validation/test)",
        splits.train.len(),
        splits.text_to_user.validation.len(),
        splits.text_to_user.test.len(),
        splits.image_to_text.validation.len(),
        splits.image_to_text.test.len(),
        splits.image_to_user.validation.len(),
        splits.image_to_user.test.len()
    );
    Ok(())
}

pub fn train_model(run: &RunDir, settings: &Settings) -> Result<()> {
    let data = run.load_data()?;
    let splits = run.load_splits()?;
    let model_cfg = settings.model_config(data.images.dim(), data.words.dim())?;
    let train_cfg = settings.train_config()?;
    let ckpt_dir = run.path(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;

    let mut epoch = 0;
    let outcome = train(
        TrainData {
            corpus: &data.corpus,
            splits: &splits,
            resources: data.resources(),
        },
        &model_cfg,
        &train_cfg,
        &mut |ck: &Checkpoint| {
            epoch += 1;
            save_checkpoint(&ckpt_dir.join(format!("epoch-{epoch:03}.ckpt")), ck)
        },
    )?;
    save_checkpoint(&run.path(MODEL_FILE), &outcome.best)?;

    let mut log = String::new();
    for e in &outcome.epochs {
        log.push_str(&serde_json::to_string(e)?);
        log.push('\n');
        eprintln!(
            "stage {} epoch {:>3} loss {:.5} lr {:.2e} validation score {:.3}",
            e.stage, e.epoch, e.mean_loss, e.lr, e.score
        );
    }
    fs::write(run.path(TRAIN_LOG), log)?;
    fs::write(run.path(TRAIN_SETTINGS), settings.to_text())?;
    if let Some(meta) = &outcome.best.meta {
        println!("best checkpoint: epoch {} score {:.3}", meta.epoch, meta.score);
    }
    Ok(())
}

fn checkpoint_path(run: &RunDir, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| run.path(MODEL_FILE))
}

/// Settings the checkpoint was trained with, used to label reports.
fn training_settings(run: &RunDir, fallback: &Settings) -> Result<Settings> {
    let path = run.path(TRAIN_SETTINGS);
    if path.exists() {
        Settings::load(&path)
    } else {
        Ok(fallback.clone())
    }
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub baseline: Option<BaselineKind>,
    pub part: SplitPart,
    pub out: Option<PathBuf>,
}

pub fn eval_retrieval(run: &RunDir, settings: &Settings, args: &EvalArgs) -> Result<()> {
    let data = run.load_data()?;
    let splits = run.load_splits()?;
    let (method, weights, report) = match args.baseline {
        Some(kind) => {
            let users = baseline_user_embedding(
                &data.corpus,
                kind,
                &data.vocab,
                &data.words,
                &data.images,
                settings.seed()?,
            )?;
            let embedder = BaselineEmbedder {
                users: &users,
                resources: data.resources(),
            };
            let kinds: &[RetrievalKind] = match kind {
                // baseline texts and images live in different spaces
                BaselineKind::AvgText => &[RetrievalKind::TextToUser],
                BaselineKind::AvgImage => &[RetrievalKind::ImageToUser],
            };
            let r = evaluate_retrieval(&embedder, &data.corpus, &splits, args.part, kinds)?;
            (kind.name().to_string(), None, r)
        }
        None => {
            let ck = load_checkpoint(&checkpoint_path(run, &args.checkpoint))?;
            let trained = training_settings(run, settings)?;
            let embedder = ModelEmbedder {
                model: &ck.model,
                resources: data.resources(),
            };
            let r = evaluate_retrieval(&embedder, &data.corpus, &splits, args.part, &RetrievalKind::ALL)?;
            let mode: String = trained.get("mode", "joint".to_string())?;
            (mode, Some(trained.weights()?), r)
        }
    };
    print!("{}", retrieval_kv_lines(&method, &report));
    let csv = format!(
        "{RETRIEVAL_CSV_HEADER}\n{}\n",
        retrieval_csv_row(&method, weights.as_ref(), &report)
    );
    let out = args.out.clone().unwrap_or_else(|| run.path(RETRIEVAL_CSV));
    fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// User embeddings from a checkpoint or a baseline.
fn user_matrix(
    run: &RunDir,
    settings: &Settings,
    data: &Data,
    checkpoint: &Option<PathBuf>,
    baseline: Option<BaselineKind>,
) -> Result<(String, Matrix)> {
    Ok(match baseline {
        Some(kind) => (
            kind.name().to_string(),
            baseline_user_embedding(&data.corpus, kind, &data.vocab, &data.words, &data.images, settings.seed()?)?,
        ),
        None => {
            let ck = load_checkpoint(&checkpoint_path(run, checkpoint))?;
            let mode: String = training_settings(run, settings)?.get("mode", "joint".to_string())?;
            (mode, project_users(&ck.model)?)
        }
    })
}

pub fn eval_interests(run: &RunDir, settings: &Settings, args: &EvalArgs, labels: &Option<PathBuf>) -> Result<()> {
    let data = run.load_data()?;
    let labels = InterestLabels::load(&labels.clone().unwrap_or_else(|| run.path(LABELS_FILE)))?;
    let (method, users) = user_matrix(run, settings, &data, &args.checkpoint, args.baseline)?;
    let d = SvmConfig::default();
    let svm = SvmConfig {
        c: settings.get("svm_c", d.c)?,
        iterations: settings.get("svm_iterations", d.iterations)?,
    };
    let report = predict_user_interests(&users, &labels, settings.get("folds", 5)?, settings.seed()?, &svm)?;
    print!("{}", interest_kv_lines(&method, &report));
    let weights = match args.baseline {
        Some(_) => None,
        None => Some(training_settings(run, settings)?.weights()?),
    };
    let csv = format!(
        "{INTEREST_CSV_HEADER}\n{}\n",
        interest_csv_row(&method, weights.as_ref(), &report)
    );
    let out = args.out.clone().unwrap_or_else(|| run.path(INTEREST_CSV));
    fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn read_topics(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let topic = l.split('\t').nth(1).with_context(|| format!("bad topic line {l:?}"))?;
            Ok(topic.trim().parse()?)
        })
        .collect()
}

pub fn cluster(run: &RunDir, settings: &Settings, args: &EvalArgs) -> Result<()> {
    let data = run.load_data()?;
    let k = settings.get("k", 5)?;
    let ck = load_checkpoint(&checkpoint_path(run, &args.checkpoint))?;
    let users = project_users(&ck.model)?;
    let model = kmeans(&users, k, settings.seed()?, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    let embedder = ModelEmbedder {
        model: &ck.model,
        resources: data.resources(),
    };
    let mut image_vectors = Vec::with_capacity(data.images.len());
    for id in data.images.ids() {
        image_vectors.push((id.clone(), embedder.embed_image(id)?));
    }
    let index = build_index(image_vectors, Metric::Cosine)?;
    let reports = cluster_report(
        &model,
        &data.corpus,
        settings.get("common_words", 20)?,
        settings.get("top_images", 5)?,
        &index,
    )?;
    let mut text = format!("k={k} objective={:.6} iterations={}\n", model.objective, model.history.len());
    let topics = run.path(TOPICS_FILE);
    if topics.exists() {
        let labels = read_topics(&topics)?;
        text.push_str(&format!("purity={:.4}\n", purity(&model.assignment, &labels)));
    }
    text.push_str(&render_cluster_report(&reports, settings.get("top_words", 10)?));
    let out = args.out.clone().unwrap_or_else(|| run.path(CLUSTER_REPORT));
    fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Users,
    Texts,
    Images,
}

pub enum Query {
    Text(String),
    Image(String),
    User(usize),
}

pub fn retrieve(run: &RunDir, settings: &Settings, checkpoint: &Option<PathBuf>, query: &Query, target: Target) -> Result<()> {
    let data = run.load_data()?;
    let ck = load_checkpoint(&checkpoint_path(run, checkpoint))?;
    let embedder = ModelEmbedder {
        model: &ck.model,
        resources: data.resources(),
    };
    let q = match query {
        Query::Text(raw) => {
            let tokens = clean_text(raw, &CleaningConfig::default());
            if data.vocab.encode(&tokens).is_empty() {
                bail!("query text has no in-vocabulary words");
            }
            embedder.embed_text(&tokens)?
        }
        Query::Image(id) => embedder.embed_image(id)?,
        Query::User(u) => embedder.embed_user(*u)?,
    };
    let gallery = gallery(&embedder, &data, target)?;
    let k = settings.get("k", 10)?;
    let index = build_index(gallery, Metric::Cosine)?;
    let hits: Vec<Neighbor<String>> = index.query_knn(&q, k.min(index.len()))?;
    let mut out = std::io::stdout().lock();
    for h in hits {
        writeln!(out, "{}\t{:.6}", h.id, h.score)?;
    }
    Ok(())
}

fn gallery(embedder: &ModelEmbedder, data: &Data, target: Target) -> Result<Vec<(String, Vec<f64>)>> {
    let mut items = Vec::new();
    match target {
        Target::Users => {
            for u in 0..embedder.user_count() {
                items.push((u.to_string(), embedder.embed_user(u)?));
            }
        }
        Target::Images => {
            for id in data.images.ids() {
                items.push((id.clone(), embedder.embed_image(id)?));
            }
        }
        Target::Texts => {
            for p in &data.corpus.posts {
                if let Some(t) = &p.tokens {
                    if !data.vocab.encode(t).is_empty() {
                        items.push((p.post_id.to_string(), embedder.embed_text(t)?));
                    }
                }
            }
        }
    }
    if items.is_empty() {
        bail!("retrieval gallery is empty");
    }
    Ok(items)
}
