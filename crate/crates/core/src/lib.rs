//! Deterministic simulator of cross-device federated averaging with
//! transmission compression and configurable client data heterogeneity.

pub mod codecs;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
