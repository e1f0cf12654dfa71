#![allow(dead_code)]

use ambigzsl::data::{generate_synthetic_bundle, SyntheticSpec};
use ambigzsl::{DatasetBundle, TrainConfig};

pub fn bundle(n_seen: usize, n_unseen: usize, seed: u64) -> DatasetBundle {
    generate_synthetic_bundle(&SyntheticSpec {
        n_seen,
        n_unseen,
        d: 6,
        a: 4,
        samples_per_class: 8,
        noise_scale: 0.05,
        seed,
    })
    .unwrap()
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 8,
        hidden_dim: 16,
        n_critic: 2,
        synth_per_unseen: 12,
        clf_epochs: 4,
        init_std: 0.1,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}
