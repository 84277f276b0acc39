//! Probabilistic training of kernel adaptive filters.
//!
//! A kernel least-mean-squares style predictor `y_i = sum_j alpha_j k(x_i, s_j) + noise`
//! is given priors over its weights, dictionary, kernel lengthscale and noise
//! level. The dictionary prior penalises the Gram matrix norm so that learnt
//! centres spread out. Parameters are fitted by gradient-based MAP estimation
//! or adaptive random-walk Metropolis, and can seed a standard KLMS filter or
//! be re-estimated window by window for fully adaptive operation.

pub mod adaptive;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod inference;
pub mod kernel;
pub mod klms;
pub mod model;

pub use error::{Error, Result};
pub use exec::Exec;
