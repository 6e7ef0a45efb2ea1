//! Local component analysis.
//!
//! Unsupervised learning of a full Euclidean metric for Parzen-window
//! density estimation, by EM on the leave-one-out log-likelihood; a
//! semi-parametric product of a Gaussian and a Parzen estimator; and a
//! subsampled variant that scales linearly with the number of points.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod density;
pub mod error;
pub mod gauss_parzen;
pub mod harness;
pub mod io;
pub mod lca;
pub mod matrix;
pub mod seeds;
pub mod stochastic;
pub mod subsample;

mod kernel;

pub use data::Dataset;
pub use error::{LcaError, Result};
pub use gauss_parzen::{GaussParzenModel, SplitResult};
pub use lca::{FitConfig, MetricModel, Responsibilities};
pub use matrix::{EigenPairs, SymMatrix};
