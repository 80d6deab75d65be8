//! coVariance neural networks (VNNs) for brain-age-gap estimation.
//!
//! The crate covers the whole numerical pipeline: graph signal processing
//! primitives over symmetric matrices, anatomical covariance estimation, the
//! VNN itself with exact gradients, regression training, the age-bias
//! corrected brain-age gap with regional explanations and group statistics,
//! synthetic multiscale cohorts, and the experiment harnesses that check
//! stability to covariance perturbations and transference across
//! resolutions.

pub mod brainage;
pub mod cohort_io;
pub mod covariance;
pub mod error;
pub mod gsp;
pub mod linalg;
pub mod rng;
pub mod stability;
pub mod stats;
pub mod synth;
pub mod training;
pub mod transfer;
pub mod vnn;

pub use error::{Error, Result};
