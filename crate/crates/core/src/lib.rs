//! Recovering latent actions, action-conditioned transitions and
//! demonstrator policies from action-free, demonstrator-tagged transitions.

pub mod align;
pub mod diversity;
pub mod embedding;
pub mod env;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod nmf;
pub mod rng;
pub mod stochastic;

pub use error::{Error, Result};
pub use stochastic::StochasticMatrix;
