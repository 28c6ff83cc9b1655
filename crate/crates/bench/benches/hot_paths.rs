use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use jointembed::corpus::Post;
use jointembed::eval::{mean_median_rank, Resources, RetrievalKind, RetrievalTask};
use jointembed::loss::{mixture_loss, BatchPairs, LossWeights, MarginConfig};
use jointembed::model::{BatchEmbeddings, Model};
use jointembed::nnindex::{IndexOptions, Metric, TreeMode, VectorIndex};
use jointembed::optim::{batch_gradients, TrainMode};
use jointembed::synth::{generate_synthetic_corpus, SynthConfig};
use jointembed_bench::{random_rows, small_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn");
    let queries = random_rows(64, 8, 2);
    for (label, tree) in [("tree", TreeMode::Always), ("scan", TreeMode::Never)] {
        let opts = IndexOptions { tree, ..IndexOptions::default() };
        let index = VectorIndex::build(random_rows(20_000, 8, 1).into_iter().enumerate(), Metric::Euclidean, opts).unwrap();
        group.bench_function(BenchmarkId::new(label, "20k x 8"), |b| {
            b.iter(|| {
                for q in &queries {
                    black_box(index.query_knn(q, 10).unwrap());
                }
            })
        });
    }
    let cosine = VectorIndex::build(
        random_rows(20_000, 64, 3).into_iter().enumerate(),
        Metric::Cosine,
        IndexOptions::default(),
    )
    .unwrap();
    let q = random_rows(1, 64, 4).pop().unwrap();
    group.bench_function("cosine 20k x 64", |b| b.iter(|| black_box(cosine.query_knn(&q, 10).unwrap())));
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let synth = generate_synthetic_corpus(&SynthConfig::default()).unwrap();
    let model = Model::new(
        small_model(synth.images.dim(), synth.words.dim()),
        synth.corpus.user_count,
        0,
    )
    .unwrap();
    let res = Resources {
        vocab: &synth.vocab,
        words: &synth.words,
        images: &synth.images,
    };
    let batch: Vec<&Post> = synth.corpus.posts.iter().take(100).collect();
    let weights = LossWeights::default();
    let margin = MarginConfig::default();

    let tokens: Vec<usize> = synth.vocab.encode(batch.iter().find_map(|p| p.tokens.as_ref()).unwrap());
    c.bench_function("encode_text", |b| b.iter(|| black_box(model.encode_text(&tokens, &synth.words).unwrap())));

    c.bench_function("forward+backward batch 100", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.iter(|| black_box(batch_gradients(&model, &batch, res, TrainMode::Joint, &weights, &margin, &mut rng).unwrap()))
    });

    let pairs = BatchPairs::from_posts(&batch);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rows = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
    let emb = BatchEmbeddings {
        text: rows(pairs.texts.len()),
        image: rows(pairs.images.len()),
        user: rows(pairs.users.len()),
    };
    c.bench_function("mixture_loss batch 100", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.iter(|| black_box(mixture_loss(&emb, &pairs, &weights, &margin, &mut rng).unwrap()))
    });
}

fn median_rank(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1000;
    let task = RetrievalTask {
        kind: RetrievalKind::TextToUser,
        queries: random_rows(n, 64, 6),
        query_ids: (0..n).map(|i| i.to_string()).collect(),
        gallery: random_rows(n, 64, 7),
        gallery_ids: (0..n).map(|i| i.to_string()).collect(),
        ground_truth: (0..n).map(|_| vec![rng.random_range(0..n)]).collect(),
    };
    c.bench_function("mean_median_rank 1000 x 1000", |b| b.iter(|| black_box(mean_median_rank(&task).unwrap())));
}

criterion_group!(benches, knn, training_step, median_rank);
criterion_main!(benches);
