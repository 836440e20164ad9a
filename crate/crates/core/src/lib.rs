//! Beamformer design for concentric circular microphone arrays.
//!
//! Ring weights and per-ring Gaussian-window widths are optimized per
//! frequency band with reverse-mode automatic differentiation and RProp so
//! that the −6 dB mainlobe widths in elevation and azimuth meet a target while
//! directivity and white-noise gain stay as flat as possible across frequency.

// `!(x > 0.0)` is deliberate throughout: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod design;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod optimizer;
pub mod wavefield;
pub mod weighting;

pub use error::{Error, Result};
pub use exec::Execution;
pub use num_complex::Complex64;
