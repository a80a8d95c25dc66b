//! Localized Hermite kernels for function approximation on unknown manifolds,
//! with the feature pipelines and kernel classifiers used to apply them to
//! micro-Doppler spectrograms and other time-frequency data.

pub mod approximation;
pub mod classify;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod features;
pub mod hermite;
pub mod io;
pub mod kernels;
pub mod linalg;

pub use error::{Error, Result};
