//! Robustness testing of tabular prediction models through budget-controlled
//! covariate perturbations.

pub mod categorical;
pub mod config;
pub mod data;
pub mod diagnosis;
pub mod error;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod numeric;
pub mod pipeline;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
