//! Simulation toolkit for a delayed predator-prey system and two stochastic
//! variants of it (environmental and demographic noise).
//!
//! - [`model`]: drift, diffusion, event table, equilibria
//! - [`rng`]: reproducible random streams and Brownian increments
//! - [`history`]: delayed-state storage and interpolation
//! - [`dde`]: RK4 method of steps
//! - [`sdde`]: Euler-Maruyama / Milstein
//! - [`ensemble`]: Monte Carlo ensembles and bifurcation, crossover and
//!   extinction analyses
//! - [`cli`]: configuration, CSV output and the `delaydyn` command

// `!(v > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dde;
pub mod ensemble;
pub mod error;
pub mod history;
pub mod model;
pub mod rng;
pub mod sdde;
pub mod stats;

pub use dde::{integrate_dde, DelayedField, PredatorPreyField, Scheme, SolverConfig, Trajectory};
pub use ensemble::{
    bifurcation_scan, extinction_curve, extinction_time, find_crossover, long_term_average,
    post_transient_extrema, run_ensemble, EnsembleResult,
};
pub use error::{Error, Result};
pub use history::{HistoryBuffer, HistoryFunction};
pub use model::{
    compute_equilibria, diffusion_model1, diffusion_model2, drift, transition_table, DiffusionPair,
    EquilibriumSet, ModelParams, Regime, State, TransitionTable,
};
pub use rng::{seed_stream, wiener_increments, RngStream, WienerIncrements};
pub use sdde::{
    integrate_sdde, integrate_sdde_with_increments, milstein_correction, NoiseModel,
    StochasticModel, StochasticSystem,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
