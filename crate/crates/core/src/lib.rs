//! Conditional feature-generating zero-shot learning with a
//! semantic-ambiguity regularizer.
//!
//! A VAE-GAN backbone (encoder `E`, conditional generator `G`, conditional
//! critic `D1`, unconditional critic `D2`) synthesizes visual features from
//! class prototypes. The regularizer builds virtual classes by convex
//! combination of two real prototypes, generates features for them and
//! trains `G` (with an auxiliary classifier `f`) to recognise the matching
//! two-class soft label.
//!
//! Modules, bottom up:
//! - [`data`]: dataset bundles, ingestion, synthetic generator
//! - [`mixer`]: ambiguous prototypes and soft labels, lambda policies
//! - [`nets`]: two-layer perceptrons with analytic gradients
//! - [`losses`]: VAE, WGAN-GP, soft cross-entropy and the ambiguity loss
//! - [`trainer`]: adversarial training, feature synthesis, final classifiers
//! - [`eval`]: per-class top-1, harmonic mean, mNRG aggregation, reports

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod mixer;
pub mod nets;
pub mod numfmt;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use data::{ClassId, DatasetBundle, LabeledFeatures, SplitSpec};
pub use error::{Error, Result};
pub use mixer::{AmbiguousBatch, LambdaPolicy, PoolSelector};
pub use nets::{LinearClassifier, Mlp, MlpSpec, ModelParams};
pub use trainer::{TrainConfig, TrainedModel};
