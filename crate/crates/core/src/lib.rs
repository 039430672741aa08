//! Multi-asset mean field game of optimal portfolio trading.
//!
//! A continuum of investors executes portfolio orders over one trading
//! horizon; their aggregate speed feeds back into prices through permanent
//! impact. This crate solves the resulting equilibrium (matrix Riccati
//! path, forward-backward mean-field system, individual strategies),
//! simulates impacted price panels, estimates intraday covariance and its
//! crowd-generated excess, and calibrates the model to observed covariance
//! curves.
//!
//! Layout:
//! - [`params`], [`riccati`], [`mean_field`], [`strategy`]: the trading game.
//! - [`sim`], [`panel`]: synthetic market panels and their file formats.
//! - [`covariance`], [`prediction`], [`regression`], [`patterns`]: the
//!   intraday covariance laboratory.
//! - [`calibration`]: the toy calibration pipeline.

pub mod calibration;
pub mod covariance;
pub mod error;
pub mod linalg;
pub mod mean_field;
pub mod optim;
pub mod panel;
pub mod params;
pub mod patterns;
pub mod prediction;
pub mod regression;
pub mod riccati;
pub mod sim;
pub mod strategy;

pub use error::{CalibrationError, EstimatorError, PanelError, ParamError, SolverError};
pub use mean_field::{
    solve_mean_field_heterogeneous, solve_mean_field_identical, AgentClass, FixedPointOptions,
    HeterogeneousSolution, MeanFieldSolution,
};
pub use params::{build_sigma, MarketParams, TimeGrid};
pub use riccati::{solve_riccati, RiccatiPath};
pub use strategy::{optimal_speed, propagator, simulate_agent, AgentTrajectory, SpeedDecomposition};
