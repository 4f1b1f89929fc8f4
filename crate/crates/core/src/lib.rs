//! Learning low-rank Mahalanobis ground metrics for optimal transport.
//!
//! Given class-labeled empirical distributions, the crate learns a projection
//! `W` so that the Wasserstein distance under `d(x, y) = ||W (x - y)||`
//! separates classes by a margin, and evaluates the learned metric through
//! nearest-neighbor classification, hierarchical clustering and feature
//! importance.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod metric;
pub mod optim;
pub mod ot;
pub mod rng;
pub mod trainer;
pub mod triplets;

pub use error::{Error, Result};
