//! Cascade relational triple extraction: a BiLSTM encoder feeding subject,
//! subject-conditioned object, and pair-conditioned relation taggers,
//! trained with a confidence-gated binary cross-entropy.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod taggers;
pub mod training;

pub use data::{AnnotatedSentence, RelationSchema, Span, Triple};
pub use error::{Error, Result};
pub use evaluation::{MatchMode, MetricReport};
pub use loss::{LossConfig, LossVariant};
pub use model::{Checkpoint, Thresholds};
pub use scalar::Scalar;
pub use training::TrainConfig;

pub type Matrix32 = linalg::Matrix<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type Trainer32 = training::Trainer<f32>;
pub type Trainer64 = training::Trainer<f64>;
