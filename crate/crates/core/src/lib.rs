//! Information divergences between Poisson point processes with
//! Gaussian-mixture intensities, and a multi-target sensor-management
//! simulator that uses the Cauchy-Schwarz divergence as its control reward.
//!
//! - [`gaussmix`]: Gaussian and Gaussian-mixture algebra.
//! - [`divergence`]: closed-form Cauchy-Schwarz and Bhattacharyya divergences
//!   between Poisson processes (and mixtures of them), plus quadrature oracles.
//! - [`pointprocess`]: sampling, densities and Monte-Carlo oracles.
//! - [`gmphd`]: Gaussian-mixture PHD filter with a state-dependent detection
//!   probability.
//! - [`scenario`], [`control`], [`metrics`], [`harness`]: the tracking
//!   experiment, reward-driven sensor control, OSPA, and batch execution.

pub mod control;
pub mod divergence;
pub mod error;
pub mod gaussmix;
pub mod gmphd;
pub mod harness;
pub mod metrics;
pub mod pointprocess;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
