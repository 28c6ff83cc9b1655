use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jointembed::corpus::{build_vocabulary, clean_text, load_corpus, read_word_table, CleaningConfig, WordEmbeddings};
use jointembed::loss::cosine_similarity;
use jointembed::model::load_checkpoint;

const SMALL: &str = "\
dim=32
filters=2:16,3:8
batch_size=100
epochs=3
init_users_from_words=true
users_per_topic=12
posts_per_user=20
image_text_test_count=60
";

fn jointembed(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointembed"))
        .arg("--dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = jointembed(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// synth, ingest, split, train and evaluate in `dir`.
fn pipeline(dir: &Path) {
    let conf = dir.join("run.conf");
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(&conf, SMALL).unwrap();
    let conf = conf.to_str().unwrap();
    for cmd in ["synth", "ingest", "split", "train", "eval-retrieval"] {
        ok(dir, &[cmd, "--config", conf, "--seed", "7"]);
    }
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_train_eval_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    pipeline(tmp.path());
    let csv = std::fs::read_to_string(tmp.path().join("retrieval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,lambda1,lambda2,lambda3,text_to_user,image_to_text,image_to_user,joint");
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row.len(), 8);
    assert_eq!(&row[..4], ["joint", "0.1", "0.45", "0.45"]);
    for v in &row[4..] {
        v.parse::<f64>().unwrap();
    }
    assert!(tmp.path().join("model.ckpt").exists());
    assert_eq!(std::fs::read_dir(tmp.path().join("checkpoints")).unwrap().count(), 3);
}

#[test]
fn non_simplex_weights_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = jointembed(tmp.path(), &["train", "--lambda1", "0.5", "--lambda2", "0.6", "--lambda3", "0.2"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sum to 1.3"), "{err}");
}

#[test]
fn unknown_flag_and_config_key_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!jointembed(tmp.path(), &["train", "--learning-rate", "1"]).status.success());
    let conf = tmp.path().join("bad.conf");
    std::fs::write(&conf, "colour=blue\n").unwrap();
    let out = jointembed(tmp.path(), &["synth", "--config", conf.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn retrieve_matches_brute_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);
    let query = "t1w3 t1w5 c2 t1w8";
    let stdout = ok(dir, &["retrieve", "--text", query, "--k", "5"]);
    let hits: Vec<(usize, f64)> = stdout
        .lines()
        .map(|l| {
            let (id, s) = l.split_once('\t').unwrap();
            (id.parse().unwrap(), s.parse().unwrap())
        })
        .collect();
    assert_eq!(hits.len(), 5);

    let cleaning = CleaningConfig::with_stopwords(Vec::<String>::new());
    let (corpus, _) = load_corpus(&dir.join("corpus.jsonl"), &dir.join("images.bin"), &cleaning, None).unwrap();
    let (dim, table) = read_word_table(&dir.join("vectors.txt")).unwrap();
    let vocab = build_vocabulary(&corpus.posts, 1).retain(|w| table.contains_key(w));
    let words = WordEmbeddings::for_vocabulary(&vocab, &table, dim);
    let model = load_checkpoint(&dir.join("model.ckpt")).unwrap().model;
    let q = model
        .encode_text(&vocab.encode(&clean_text(query, &CleaningConfig::default())), &words)
        .unwrap();
    let mut all: Vec<(usize, f64)> = (0..model.user_count())
        .map(|u| (u, cosine_similarity(&q, &model.encode_user(u).unwrap()).unwrap()))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for ((id, score), (u, s)) in hits.iter().zip(&all) {
        assert_eq!(id, u);
        assert!((score - s).abs() < 1e-6);
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{} differs", name.display());
    }
}
