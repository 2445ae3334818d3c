// SPDX-License-Identifier: Apache-2.0

//! Generative adversarial imputation for traffic-style matrix data.
//!
//! The crate provides the iterative imputer (IGANI) together with the GAIN
//! and MisGAN baselines, non-adversarial reference imputers, dataset
//! plumbing, and the evaluation grids used to compare them.

pub mod autograd;
pub mod baselines;
pub mod data;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod imputer;
pub mod losses;
pub mod network;
pub mod optim;
pub mod trainers;

pub use baselines::{iterative_impute, mean_impute, MeanImputer};
pub use data::{
    derive_seed, fit_normalizer, generate_mcar_mask, reshuffle_mask, transform, DataMatrix,
    Direction, MaskMatrix, NoiseDistribution, NoiseSource, NormalizationStats,
};
pub use error::{Error, Result};
pub use evaluation::{masked_mae, MetricsRecord, MetricsTable};
pub use imputer::{recover_mask, GenerativeImputer};
pub use network::{build_mlp, Architecture, LayerSpec, Mode, Network};
pub use optim::OptimizerKind;
pub use trainers::{
    train, train_gain, train_igani, train_misgan, train_predictor, Method, PredictorModel,
    TrainConfig, TrainedImputer,
};
