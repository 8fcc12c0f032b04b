//! Differentially private federated learning on imbalanced tabular data.

pub mod cli;
pub mod data;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod manifest;
pub mod matrix;
pub mod nn;
pub mod report;
pub mod resample;

pub use error::{Error, Result};
pub use matrix::Matrix;
