//! Simulation, path decomposition and inference tools for option risk
//! premiums in jump-diffusion futures models.
//!
//! - [`model`]: parameters, market state, simulated paths.
//! - [`simulator`]: P/Q path ensembles with kernel components.
//! - [`tanaka`]: per-path stochastic integral, local time and strike crossings.
//! - [`premia`]: P-minus-Q risk-premium decompositions.
//! - [`closedform`]: Black-Scholes and small-horizon crossing premiums.
//! - [`empirics`]: expiration-cycle returns, partitioned means, HAC errors,
//!   bootstraps.

pub mod closedform;
pub mod empirics;
pub mod error;
pub mod model;
pub mod premia;
pub mod quadrature;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod tanaka;

pub use error::{Error, Result};
pub use model::{
    validate, JumpLaw, MarketState, Measure, MeasureParams, ModelParams, RunConfig, Side, SimulatedPath,
    ValidatedConfig,
};
pub use simulator::{simulate, PathEnsemble, PathSource, Simulator};
