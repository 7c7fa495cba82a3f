//! Fully implicit monotone finite-difference solver for the one-dimensional
//! G-heat equation `u_t - G(u_xx) = 0`, with
//! `G(a) = (sigma_high^2 a^+ - sigma_low^2 a^-) / 2`.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`]: geometry, volatility band and problem definition.
//! * [`discretization`]: curvature, volatility switch, residual and system assembly.
//! * [`solver`]: Thomas solve, policy iteration per step, time march.
//! * [`oracles`]: closed-form, explicit and control dynamic-programming references.
//! * [`analysis`]: refinement and mollifier studies, randomized property drivers.
//! * [`cli`]: configuration file, commands and report writers.

pub mod analysis;
pub mod cli;
pub mod discretization;
pub mod error;
pub mod grid;
pub mod oracles;
pub mod solver;

pub use error::{SolverError, ValidationError};
pub use grid::{
    build_uniform_grid, sample_initial, Boundary, ExpectationMode, Grid1D, InitialCondition,
    ProblemSpec, SolutionField, VolatilityBand,
};
pub use solver::{march, newton_step, MarchOutcome, NewtonReport, SolverConfig};
