//! Numerical laboratory for transferability in over-parametrized two-layer
//! ReLU networks.
//!
//! The crate computes infinite-width NTK Gram matrices and the quantities
//! built from them (transformed labels, task similarity, leading terms of
//! the Lipschitz and weight-movement bounds), trains two-layer and deep
//! ReLU networks with full-batch gradient descent, and provides the probes
//! used to compare pretrained and randomly initialized models: weight
//! deviation, filter-normalized loss landscapes, Hessian spectra, loss
//! variation along the gradient, gradient-SVD projections, and checkpoint
//! distance matrices.

// Negated comparisons are used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod deepnet;
pub mod error;
pub mod io;
pub mod linalg;
pub mod ntk;
pub mod probe;
pub mod rng;
pub mod shallow;
pub mod stats;
pub mod tasks;
pub mod trace;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
