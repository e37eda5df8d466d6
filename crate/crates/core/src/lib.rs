//! Context-aware next-item recommendation.
//!
//! The crate provides the Transformer Cross Transformer (TxT) model, which
//! encodes the basket built so far and the order's context with two
//! Transformer encoders and crosses them by element-wise product, together
//! with GRU and item-to-item baselines, a training pipeline with optional
//! synchronous data parallelism, offline metrics, versioned model bundles and
//! a small TCP serving endpoint.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod kv;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod serve;
pub mod store;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
