//! Adaptive manifold inference for transductive few-shot classification.
//!
//! Given precomputed embeddings for a labeled support set and an unlabeled
//! query set, the solver builds a k-nearest-neighbour graph over class
//! centroids, support and query vectors, propagates centroid labels over the
//! graph in closed form, and adapts the centroids together with per-edge
//! affinity scales and gates by minimizing a mutual-information loss.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the parallel
//! evaluation harness and the command-line tool live in the `am` crate.
//!
//! Module map:
//!
//! - [`matrix`]: column-major dense matrices and LU factorization
//! - [`embed`]: embedding sets, synthetic data, feature pre-processing
//! - [`episodes`]: balanced and Dirichlet-imbalanced episode sampling
//! - [`graph`]: kNN affinity graph and its normalized adjacency
//! - [`propagate`]: label propagation and class probabilities
//! - [`losses`]: balanced and alpha-entropy objectives
//! - [`diff`]: reverse-mode gradients and the finite-difference oracle
//! - [`solver`]: Adam and the full adaptation loop
//! - [`eval`]: accuracy, summary statistics, nearest-centroid baseline
//! - [`gradcheck`]: randomized gradient verification
#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diff;
pub mod embed;
pub mod episodes;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod matrix;
pub mod propagate;
pub mod solver;

mod error;
mod math;

pub use error::{Error, Result};
pub use matrix::Matrix;
