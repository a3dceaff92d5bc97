//! Mean squared overlaps between the eigenvectors of a noisy symmetric matrix
//! `X_t = A + H_t` and those of its principal `n × n` minor.
//!
//! The crate has two halves. [`overlaps_theory`] and [`freeprob`] evaluate the
//! large-`N` limits (bulk kernel, interlacing maximizer, spike overlaps);
//! [`ensembles`], [`spectral`] and [`montecarlo`] simulate finite matrices and
//! measure the same quantities with confidence intervals.

pub mod ensembles;
pub mod error;
pub mod freeprob;
pub mod montecarlo;
pub mod overlaps_theory;
pub mod spectral;

pub use error::{Error, Result};
