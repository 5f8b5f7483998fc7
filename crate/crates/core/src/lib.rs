//! Autoregressive models whose coefficient and noise amplitude switch with a
//! hidden finite-state Markov chain,
//! `X_t = a(Δ_t) X_{t-1} + f(Δ_t) η_t`, estimated by matching
//! autocovariances.

pub mod covariance;
pub mod error;
pub mod estimate;
pub mod io;
pub mod model;
pub mod moments;
pub mod montecarlo;
pub mod rng;
pub mod simulate;
pub mod workflow;

pub use error::{ArhmcError, Result};
pub use model::{RegimeModel, ThetaVector};
