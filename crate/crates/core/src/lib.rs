//! Bayesian sparse PCA for the spiked covariance model.
//!
//! The crate samples the sparse orthogonal-spike prior, computes posterior
//! means under the rank-one and common-support priors with the
//! elementary-symmetric-polynomial algorithm and Monte Carlo over the latent
//! factors, and ships brute-force oracles plus subspace metrics to check all
//! of it.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod posterior;
pub mod prior;
pub mod rng;

pub use error::{Error, Result};
pub use numerics::{DenseMatrix, LogScaled};
