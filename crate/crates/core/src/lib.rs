//! Bayesian Bradley-Terry ranking of entities compared across indicators.
//!
//! The pipeline reads an indicator table, turns it into pairwise win counts,
//! places a sum-to-zero Gaussian prior on merits whose covariance comes from
//! a kernel over log-income distances, and samples the posterior with a
//! Gibbs / preconditioned Crank-Nicolson sampler. Diagnostics, ranking
//! summaries, a classical maximum-likelihood baseline and a synthetic
//! recovery study sit on top.

pub mod bt_model;
pub mod chain_io;
pub mod data_ingest;
pub mod diagnostics;
pub mod error;
pub mod mcmc;
pub mod prior_cov;
pub mod report;
pub mod sim;
pub mod win_matrix;

pub use error::{Error, ErrorKind, Result};
