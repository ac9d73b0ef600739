//! Fairness-aware adaptive minibatch sampling for logistic regression.
//!
//! The crate is organized bottom-up:
//!
//! - [`dataset`]: tabular data, the synthetic generator, `(y, z)` grouping,
//!   splits and the cutting baseline.
//! - [`model`]: logistic regression, gradients and Adam.
//! - [`metrics`]: group loss tables and the EO/ED/DP disparities.
//! - [`fairbatch`]: the λ state, sampling distributions, batch drawing and
//!   the λ update rules.
//! - [`lab`]: numerical checks of the one-dimensional bilevel theory.
//! - [`runner`]: end-to-end training, sweeps and the `verify` report used by
//!   the command-line tool.

pub mod dataset;
pub mod fairbatch;
pub mod lab;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
