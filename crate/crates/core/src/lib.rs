//! Coherent probabilistic top-down hierarchical forecasting.
//!
//! A root-level probabilistic forecast is disaggregated down a hierarchy
//! tree by a trained model that predicts Dirichlet distributions over each
//! family's future child proportions. Every sampled forecast panel is
//! coherent by construction: each parent equals the sum of its children.
//!
//! Module map:
//!
//! - [`matrix`]: the dense row-major matrix shared by every module
//! - [`hierarchy`]: trees, families, aggregation matrix, coherence checks, proportions
//! - [`data_io`]: CSV ingestion, calendar/holiday covariates, windowing and splits
//! - [`dirichlet`]: Dirichlet log-likelihood, its gradient, and sampling
//! - [`proportions`]: the proportions network (seq2seq LSTM + attention), training
//! - [`root_model`]: univariate probabilistic forecasters for the root series
//! - [`inference`]: top-down sampling and empirical quantiles
//! - [`evaluation`]: quantile CRPS and level-normalized scores
//! - [`baselines`]: bottom-up, historical proportions, MinT-OLS
//! - [`theory_sim`]: Monte Carlo excess-risk comparison of top-down vs bottom-up OLS
//! - [`pipeline`]: end-to-end helpers from a panel to forecast samples
//! - [`rng`]: seeded per-stream generators
//! - [`synthetic`]: generators for toy hierarchies used by tests and the CLI

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod baselines;
pub mod data_io;
pub mod dirichlet;
pub mod error;
pub mod evaluation;
pub mod hierarchy;
pub mod inference;
mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod proportions;
pub mod rng;
pub mod root_model;
pub mod synthetic;
pub mod theory_sim;

pub use error::{Error, Result};
