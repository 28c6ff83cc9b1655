//! Shared fixtures for the benchmarks.

use jointembed::linalg::Matrix;
use jointembed::model::{ConvBlockConfig, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Matrix::uniform(n, dim, 1.0, &mut rng);
    (0..n).map(|r| m.row(r).to_vec()).collect()
}

/// Model sized for the default synthetic corpus.
pub fn small_model(image_dim: usize, word_dim: usize) -> ModelConfig {
    ModelConfig {
        dim: 64,
        image_dim,
        word_dim,
        user_dim: word_dim,
        conv_blocks: vec![
            ConvBlockConfig { width: 2, filters: 32 },
            ConvBlockConfig { width: 3, filters: 16 },
            ConvBlockConfig { width: 4, filters: 16 },
        ],
        max_sentence_len: 20,
        bias: true,
    }
}
