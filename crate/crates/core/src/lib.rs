//! Neural Basis Models and their baselines: generalized additive models whose
//! per-feature shape functions are linear combinations of a small set of
//! shared, learned basis functions.

pub mod config;
pub mod data;
pub mod error;
pub mod interpret;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod tensors;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use nn::Mode;

/// Seeded generator used everywhere randomness is needed.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
