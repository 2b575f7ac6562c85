//! Toy text encoder (trainable) and frozen image encoder.
//!
//! Both map into the same `d`-dimensional space and ℓ2-normalize their
//! output. The text side mean-pools token embeddings and applies
//! `tanh(x·W1 + b1)·W2 + b2`; token order therefore does not matter, which is
//! a deliberate simplification of an attention encoder. The image side is a
//! fixed random linear map of [`Scene::features`](crate::scene::Scene::features).

mod image;
mod text;

pub use image::ImageEncoder;
pub use text::{tokenize, TextEncoder, TextParams, VocabError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;

/// Default embedding width.
pub const DEFAULT_DIM: usize = 64;
/// Default token-embedding width.
pub const DEFAULT_TOKEN_DIM: usize = 32;

/// Named ChaCha streams carved out of one run seed.
pub(crate) mod streams {
    pub const TEXT: u64 = 1;
    pub const IMAGE: u64 = 2;
    pub const PROJECTION: u64 = 3;
    pub const IMAGE_NOISE: u64 = 4;
    pub const SHUFFLE: u64 = 5;
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `rows × cols` matrix with entries `N(0, 1) / √rows`.
pub(crate) fn scaled_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let gain = 1.0 / (rows as f64).sqrt();
    let values = (0..rows * cols).map(|_| { let z: f64 = StandardNormal.sample(rng); gain * z }).collect::<Vec<f64>>();
    Tensor::matrix(rows, cols, values).expect("positive dimensions")
}

/// Deterministic initialization of both encoders from one seed.
pub fn init_encoders(seed: u64, d: usize, d_tok: usize) -> (TextEncoder, ImageEncoder) {
    let vocab = crate::scene::Vocabulary::standard();
    (TextEncoder::init(seed, vocab.len(), d_tok, d), ImageEncoder::init(seed, d))
}
