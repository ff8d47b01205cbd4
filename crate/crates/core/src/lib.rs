//! Uniformly accurate solver for the nonlinear Klein-Gordon equation
//! `eps^2 u_tt - Delta u + u / eps^2 + lambda u^3 = 0` on periodic domains,
//! built on a multiscale time integrator with Fourier pseudospectral
//! discretization, plus the limiting-model solvers and the error harness.

// `!(x > 0.0)` is the idiom for rejecting NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeffs;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod initial;
pub mod limits;
pub mod mti;
pub mod parallel;

pub use coeffs::{eval_mode_coeffs, CoeffTable, ModeCoeffs};
pub use error::{Result, SolverError};
pub use grid::{GridSpec, SpectralGrid};
pub use initial::InitialData;
pub use mti::{
    interpolate, interpolate_at, mti_step, run, FieldState, MicroStep, Record, RunOptions,
    SolverParams, Trajectory,
};
pub use parallel::Execution;
