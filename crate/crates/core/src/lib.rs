//! Importance-sampling guided training and evaluation of an autonomous
//! vehicle merging at a T-intersection among socially diverse drivers.

pub mod ce_eval;
pub mod data_fit;
pub mod distributions;
pub mod error;
pub mod pipeline;
pub mod policies;
pub mod rng;
pub mod simulator;
pub mod training;

pub use distributions::{likelihood_ratio, ScenarioDistribution, WeightCap};
pub use error::{Error, ErrorCategory, Result};
pub use policies::{BaselineSet, FeatureMap, SoftmaxPolicy};
pub use simulator::{rollout, Outcome, Scenario, ScenarioConfig};
