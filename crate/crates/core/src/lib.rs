//! Desk-scale laboratory for transfer-learning adaptation protocols.
//!
//! The crate trains a small pretrained feature extractor on a synthetic
//! "dominoes" dataset whose inputs pair an easy, linearly separable block
//! with a hard, antipodally arranged block under a controllable correlation,
//! then adapts it with linear probing, fine-tuning, and hardness-promoting
//! probe variants, and scores every adapted model with a safety suite
//! (accuracy under shift, calibration, anomaly detection, adversarial and
//! corruption robustness, representation similarity).
//!
//! Numeric kernels are generic over [`scalar::Scalar`] (f32 or f64); the
//! concrete aliases below pin the lab surface to f64, which every stated
//! tolerance assumes.

pub mod data;
pub mod error;
pub mod graph;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod protocols;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;

/// Default scalar for the lab binaries and tests.
pub type S = f64;

pub type Mat = matrix::Matrix<S>;
pub type Graph = graph::ComputationGraph<S>;
pub type Dataset = data::Dataset<S>;
pub type Generator = data::GeneratorState<S>;
pub type Extractor = model::FeatureExtractor<S>;
pub type Model = model::ModelState<S>;
pub type Adapted = protocols::AdaptedModel<S>;
pub type EvalSets = metrics::EvalSets<S>;
