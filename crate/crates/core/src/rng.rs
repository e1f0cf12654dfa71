//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed, so adding or removing one consumer never shifts the draws seen
//! by another.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

/// Named stream identifiers used by the trainer and the data generator.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const CRITIC: u64 = 1;
    pub const GENERATOR: u64 = 2;
    pub const REGULARIZER: u64 = 3;
    pub const BATCHES: u64 = 4;
    pub const TRANSDUCTIVE: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const CLASSIFIER: u64 = 7;
    pub const REGULARIZER_INIT: u64 = 8;
    pub const DECODER_INIT: u64 = 9;
    pub const FINETUNE_INIT: u64 = 10;
    pub const DATA: u64 = 11;
}

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Derives an independent seed, e.g. for grid points of an ablation.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = stream(seed ^ 0x9E37_79B9_7F4A_7C15, index);
    rng.random()
}

pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}
