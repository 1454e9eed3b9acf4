//! Distributionally robust cost predictors over f-divergence, optimal
//! transport and smoothed ambiguity sets, with brute-force primal oracles,
//! finite-sample bounds and Monte-Carlo experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod analysis;
pub mod divergence;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod loss;
pub mod lp;
pub mod measure;
pub mod optim;
pub mod oracle;
pub mod predictor;
pub mod transport;

pub use error::{Error, Result};
