//! Dense semidefinite programming for small control-synthesis problems.
//!
//! A [`ConicProgram`] collects scalar, vector and symmetric-matrix
//! variables, a linear objective, linear equalities and affine PSD
//! constraints. [`solve`] runs a primal-dual interior-point method and
//! reports a [`SolveOutcome`]. [`lyapunov_solve`] is the companion solver
//! for continuous Lyapunov equations.

mod lyapunov;
mod program;
mod solver;
pub mod svec;

pub use lyapunov::{lyapunov_residual, lyapunov_solve};
pub use program::{symmetric_value, vector_value, ConicProgram, LinExpr, MatExpr, SymmetricVar, VarId, VectorVar};
pub use solver::{solve, SolveOutcome, SolveStatus, SolverSettings};

#[derive(Debug, thiserror::Error)]
pub enum SdpError {
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    Spectrum { abscissa: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
}
