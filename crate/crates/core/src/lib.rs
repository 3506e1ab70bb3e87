//! Augmented transfer regression learning under covariate shift.
//!
//! A working regression `E(Y | A) = g(Aᵀβ)` is fitted for an unlabeled target
//! population using labeled source data. The estimating equation is
//! importance weighted and augmented with an imputation model, making it
//! doubly robust; both nuisance models are semi-non-parametric (parametric
//! index plus a smooth function of a low-dimensional `Z`) with the
//! nonparametric parts calibrated so that their first-order estimation error
//! cancels.

pub mod comparators;
pub mod data;
pub mod error;
pub mod estimator;
pub mod interface;
pub mod nuisance;
pub mod numerics;
pub mod rng;
pub mod simbench;

pub use data::TransferDataset;
pub use error::{AtrelError, Result};
