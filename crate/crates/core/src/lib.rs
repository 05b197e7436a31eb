//! Mixed-autonomy ring-road toolkit: one controlled vehicle among human
//! drivers on a single-lane ring.
//!
//! - [`traffic`]: car-following laws, equilibria and the linear ring model.
//! - [`controllability`]: PBH analysis and stabilizability checks.
//! - [`sparsity`]: communication topologies and sparsity-invariant patterns.
//! - [`synthesis`]: structured H2 state-feedback design by semidefinite
//!   programming, and H2 norm evaluation.
//! - [`reach`]: which equilibrium velocities the ring can settle at.
//! - [`sim`]: nonlinear stochastic simulation, metrics and experiments.

pub mod controllability;
pub mod error;
pub mod reach;
pub mod sim;
pub mod sparsity;
pub mod synthesis;
pub mod traffic;

pub use error::{AnalysisError, ModelError, SimError, SynthesisError};
