//! Interference prediction with a nonlinear autoregressive neural network and
//! finite-blocklength resource control for URLLC downlinks.
//!
//! The pipeline has two stages. A NAR network trained by Levenberg–Marquardt
//! forecasts the aggregate interference one slot ahead ([`narnn`], [`lm`]);
//! the resource-control stage scales that forecast by `α`, turns it into a
//! predicted SINR and allocates channel uses with the normal approximation
//! ([`fbl`]). [`channel_sim`] produces the correlated Rayleigh interference,
//! [`predictors`] holds the baselines, and [`eval`] runs the experiments.

pub mod channel_sim;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fbl;
pub mod lm;
pub mod narnn;
pub mod predictors;
pub mod seeds;

pub use error::{Error, Result};
