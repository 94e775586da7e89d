//! Hyperparameter tuning under differential privacy with a propose-test
//! loop and a doubling step.
//!
//! The additional privacy cost of tuning depends on the utility gained,
//! not on how many candidates are searched:
//!
//! - [`utility`] estimates each candidate's utility by subsample and
//!   aggregate, so one record moves any utility by at most `1/k`;
//! - [`tuner`] runs the noisy propose-test loop over those utilities;
//! - [`accountant`] composes the per-iteration cost and compares budgets;
//! - [`simulation`] replays the loop on synthetic tables;
//! - [`mechanisms`] holds the Laplace noise and seeded streams.

pub mod accountant;
pub mod cli;
pub mod error;
pub mod mechanisms;
pub mod simulation;
pub mod tuner;
pub mod utility;

pub use error::{Error, Result};
