//! Robust regression and transfer learning around the minimum error entropy
//! criterion.
//!
//! The crate provides:
//!
//! - RBF kernels, Gram matrices, and the median-rule bandwidth heuristic
//!   ([`kernels`]);
//! - quadratic Renyi entropy of residuals, estimated via the KDE information
//!   potential or the matrix-based spectral form ([`entropy`]);
//! - a uniform loss abstraction (MSE, MAE, Huber, the general robust loss,
//!   entropy losses, HSIC) with analytic residual gradients ([`losses`]);
//! - linear and MLP predictors split into feature extractor and head
//!   ([`models`]);
//! - Adam/SGD training, fine-tuning and linear probing with median-rule
//!   kernel sizing and bias correction ([`training`]);
//! - the synthetic covariate-shift benchmark ([`synthdata`]);
//! - sliding-window CSV ingestion for time-series tasks ([`ingest`]);
//! - seeded experiment sweeps with CSV reports ([`experiments`]).

pub mod config;
pub mod entropy;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod kernels;
pub mod losses;
pub mod models;
pub mod spectral;
pub mod stats;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use kernels::{Bandwidth, GramMatrix, MedianMode, NormalizedGram};
pub use losses::Loss;
pub use models::{Activation, Model, ModelParams, ModelSpec};
pub use synthdata::{Dataset, DatasetRole, NoiseKind, ShiftScenario};
pub use training::{
    AdaptLoss, BiasMode, Procedure, SigmaRule, TrainConfig, TrainHistory, TransferResult,
};
