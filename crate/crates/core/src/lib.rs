//! Models of the relax-or-compensate decision in a reaching task where a
//! robot may push the hand sideways with a known probability.
//!
//! - [`model`]: payoff table, Prelec weighting, CPT-softmax and logistic
//!   choice curves.
//! - [`estimation`]: maximum-likelihood CPT fits, Bayesian logistic
//!   regression (MAP and NUTS), RMSE.
//! - [`protocol`]: the blockwise reaching protocol as a seeded simulator.
//! - [`analysis`]: compensation probabilities, datasets, clustering,
//!   recovery reports and curve export.
//! - [`session`]: interactive session state machine used by the HTTP service.

pub mod analysis;
pub mod error;
pub mod estimation;
pub mod model;
pub mod protocol;
pub mod session;

pub use error::{Error, Result};
