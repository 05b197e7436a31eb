//! Nonlinear ring simulation: human drivers on the optimal velocity model,
//! the CAV under linear state feedback, held acceleration noise, braking
//! perturbations, acceleration limits and emergency braking.

pub mod engine;
pub mod experiments;
pub mod export;
pub mod linear;
pub mod metrics;
pub mod scenario;

pub use engine::{run, step, Event, EventKind, SimOutput, SimState, SimTrace, StepMode};
pub use metrics::{lq_cost, Metrics};
pub use scenario::{
    Controller, InitialState, LinearFeedback, NoiseScaling, Perturbation, Scenario, ScheduleEntry, VelocityCommand,
};
