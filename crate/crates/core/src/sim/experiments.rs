//! Canned scenario families: convergence to a target velocity (A), wave
//! dissipation under noise with a toggled controller (B) and a single
//! braking perturbation (C).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{run, SimOutput};
use super::metrics::{settle_time, Metrics};
use super::scenario::{reference_equilibrium, Controller, InitialState, LinearFeedback, Perturbation, Scenario, ScheduleEntry};
use crate::error::{SimError, SynthesisError};
use crate::sparsity::{topology_to_pattern, Topology};
use crate::synthesis::{solve_structured_h2, PerformanceWeights, SynthesisOptions, SynthesisResult};
use crate::traffic::{RingModel, RingRoad};

pub const CRUISE_VELOCITY: f64 = 15.0;
pub const A_DURATION: f64 = 100.0;
pub const A_INITIAL_SPREAD: f64 = 4.0;
pub const B_DURATION: f64 = 700.0;
pub const B_ON: f64 = 300.0;
pub const B_OFF: f64 = 450.0;
pub const B_NOISE_STD: f64 = 0.2;
pub const C_DURATION: f64 = 100.0;
pub const C_BRAKE_START: f64 = 20.0;
pub const C_BRAKE_ACCELERATION: f64 = -3.0;
pub const C_BRAKE_DURATION: f64 = 3.0;
pub const C_RECOVERY_THRESHOLD: f64 = 0.5;

/// Linearize at `v_star`, synthesize the structured gain and wrap it as a
/// feedback law aimed at the ring-closing equilibrium.
pub fn design_feedback(
    road: &RingRoad,
    v_star: f64,
    weights: &PerformanceWeights,
    topology: &Topology,
    opts: &SynthesisOptions,
) -> Result<(RingModel, SynthesisResult, LinearFeedback), SynthesisError> {
    let model = road.linearize(v_star)?;
    let pattern = topology_to_pattern(&topology.visible(road.n()), road.n())?;
    let result = solve_structured_h2(&model, weights, &pattern, opts)?;
    let feedback = LinearFeedback::new(result.k.clone(), model.v_star, model.s_star.clone())
        .map_err(|e| SynthesisError::UnboundedNorm(e.to_string()))?;
    Ok((model, result, feedback))
}

/// Random initial velocities around the cruise speed, controller on from
/// the start. Metrics are measured against the equilibrium at the
/// feedback's target velocity.
pub fn experiment_a(road: &RingRoad, feedback: LinearFeedback, seed: u64) -> Result<Scenario, SimError> {
    let mut scn = Scenario::new(road.clone(), feedback.v_star)?;
    scn.initial = InitialState::RandomVelocity { center: CRUISE_VELOCITY, spread: A_INITIAL_SPREAD };
    scn.controller = Controller::Feedback(feedback);
    scn.duration = A_DURATION;
    scn.seed = seed;
    Ok(scn)
}

/// Noisy run from equilibrium with the controller switched on at 300 s and
/// off again at 450 s.
pub fn experiment_b(road: &RingRoad, feedback: LinearFeedback, seed: u64) -> Result<Scenario, SimError> {
    let mut scn = Scenario::new(road.clone(), feedback.v_star)?;
    scn.initial = InitialState::Equilibrium { v: feedback.v_star };
    scn.controller = Controller::Feedback(feedback);
    scn.duration = B_DURATION;
    scn.noise_std = B_NOISE_STD;
    scn.initially_active = false;
    scn.schedule = vec![ScheduleEntry { time: B_ON, active: true }, ScheduleEntry { time: B_OFF, active: false }];
    scn.seed = seed;
    Ok(scn)
}

/// One vehicle brakes at -3 m/s^2 for 3 s from t = 20 s. `feedback = None`
/// gives the all-human baseline.
pub fn experiment_c(road: &RingRoad, feedback: Option<LinearFeedback>, vehicle: usize) -> Result<Scenario, SimError> {
    let mut scn = Scenario::new(road.clone(), CRUISE_VELOCITY)?;
    if let Some(f) = feedback {
        scn.reference = reference_equilibrium(road, f.v_star)?;
        scn.initial = InitialState::Equilibrium { v: f.v_star };
        scn.controller = Controller::Feedback(f);
    }
    scn.duration = C_DURATION;
    scn.perturbation = Some(Perturbation {
        vehicle,
        start: C_BRAKE_START,
        acceleration: C_BRAKE_ACCELERATION,
        duration: C_BRAKE_DURATION,
    });
    Ok(scn)
}

/// Run scenarios in parallel, preserving order.
pub fn run_batch(scenarios: &[Scenario]) -> Vec<Result<SimOutput, SimError>> {
    scenarios.par_iter().map(run).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub vehicle: usize,
    pub controlled: Metrics,
    pub uncontrolled: Metrics,
    /// Seconds after the brake ends until `max_i |v_i - v*|` stays below
    /// the recovery threshold, for the controlled run.
    pub recovery_time: Option<f64>,
}

/// Experiment C for every listed perturbed vehicle, with and without the
/// controller.
pub fn perturbation_sweep(
    road: &RingRoad,
    feedback: &LinearFeedback,
    vehicles: &[usize],
) -> Result<Vec<PerturbationRow>, SimError> {
    vehicles
        .par_iter()
        .map(|&vehicle| {
            let on = run(&experiment_c(road, Some(feedback.clone()), vehicle)?)?;
            let off = run(&experiment_c(road, None, vehicle)?)?;
            let end = C_BRAKE_START + C_BRAKE_DURATION;
            let recovery_time =
                settle_time(&on.trace, feedback.v_star, C_RECOVERY_THRESHOLD, end).map(|t| t - end);
            Ok(PerturbationRow { vehicle, controlled: on.metrics, uncontrolled: off.metrics, recovery_time })
        })
        .collect()
}
