//! Distribution-free confidence intervals for individual treatment effects.
//!
//! The library combines a small conditional denoising-diffusion generative
//! model with weighted split-conformal calibration. Kernel localization
//! handles the covariate shift between calibration and target points, and
//! inverse-propensity balancing handles the shift induced by treatment
//! assignment. A benchmark harness replays the whole pipeline over seeded
//! synthetic data-generating processes and aggregates coverage and interval
//! length across replicates.
//!
//! Module map:
//! - [`numerics`] — dense MLP forward/backward, AdamW, learning-rate schedule
//! - [`diffusion`] — noise schedule, denoiser training, ancestral sampling
//! - [`propensity`] — gradient-boosted trees and a logistic fallback
//! - [`conformal`] — scores, weights, weighted quantile, prediction sets
//! - [`datagen`] — synthetic and semi-synthetic data-generating processes
//! - [`bench`] — replicate orchestration, bandwidth selection, aggregation
//! - [`checkpoint`] — versioned text persistence for trained models

pub mod bench;
pub mod checkpoint;
pub mod conformal;
pub mod datagen;
pub mod diffusion;
pub mod error;
pub mod numerics;
pub mod propensity;
pub mod rng;

pub use conformal::{Bandwidth, CalibrationRecord, PredictionSet};
pub use datagen::{Dataset, DgpConfig, NoiseFamily, Scenario, Split, VarianceMode};
pub use diffusion::{DiffusionModel, DiffusionTrainConfig, Schedule};
pub use error::{Error, Result};
pub use numerics::{Activation, AdamWConfig, AdamWState, MlpParams};
pub use propensity::{BoostedTreesModel, GbmConfig, LogisticModel};
pub use rng::Seed;

/// Version string embedded in every persisted artifact.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
