use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::reach::cav_spacing;
use crate::synthesis::PerformanceWeights;
use crate::traffic::{EquilibriumState, RingModel, RingRoad};

pub const A_MIN: f64 = -5.0;
pub const A_MAX: f64 = 2.0;
pub const DEFAULT_DT: f64 = 0.01;
/// Gain of the lower-level loop that turns a command velocity into an
/// acceleration.
pub const LOWER_LEVEL_KP: f64 = 0.6;

/// `u = -K (x - x*)` in absolute spacing/velocity coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFeedback {
    pub gain: Vec<f64>,
    pub v_star: f64,
    /// Target spacings, CAV first.
    pub s_star: Vec<f64>,
}

impl LinearFeedback {
    pub fn new(gain: Vec<f64>, v_star: f64, s_star: Vec<f64>) -> Result<Self, SimError> {
        if gain.len() != 2 * s_star.len() {
            return Err(SimError::InvalidScenario(format!(
                "gain has {} entries for {} vehicles",
                gain.len(),
                s_star.len()
            )));
        }
        if gain.iter().chain(&s_star).any(|x| !x.is_finite()) || !v_star.is_finite() {
            return Err(SimError::InvalidScenario("non-finite feedback data".into()));
        }
        Ok(Self { gain, v_star, s_star })
    }

    /// Targets taken from the model's equilibrium.
    pub fn from_model(m: &RingModel, gain: &[f64]) -> Result<Self, SimError> {
        Self::new(gain.to_vec(), m.v_star, m.s_star.clone())
    }

    /// Same gain, different desired CAV spacing.
    pub fn with_cav_spacing(mut self, s1: f64) -> Self {
        self.s_star[0] = s1;
        self
    }

    pub fn command(&self, spacings: &[f64], velocities: &[f64]) -> f64 {
        let mut u = 0.0;
        for (i, (&s, &v)) in spacings.iter().zip(velocities).enumerate() {
            u -= self.gain[2 * i] * (s - self.s_star[i]) + self.gain[2 * i + 1] * (v - self.v_star);
        }
        u
    }
}

/// A command-velocity law for the CAV, tracked through `u = kp (v_cmd - v)`.
pub trait VelocityCommand: Send + Sync + fmt::Debug {
    fn command(&self, t: f64, spacings: &[f64], velocities: &[f64]) -> f64;
}

#[derive(Debug, Clone, Default)]
pub enum Controller {
    /// The CAV drives with its own car-following parameters.
    #[default]
    None,
    Feedback(LinearFeedback),
    Command { law: Arc<dyn VelocityCommand>, kp: f64 },
}

/// One vehicle brakes at a fixed rate for a while.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// 1-based vehicle index.
    pub vehicle: usize,
    pub start: f64,
    /// Applied acceleration, m/s^2 (negative for braking).
    pub acceleration: f64,
    pub duration: f64,
}

impl Perturbation {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// Every HDV at its equilibrium spacing for `v`; the CAV takes the rest.
    Equilibrium { v: f64 },
    /// Equilibrium spacings for `center`, velocities `center + U[-spread, spread]`.
    RandomVelocity { center: f64, spread: f64 },
    /// Explicit spacings (CAV first) and velocities; spacings must sum to the circumference.
    Explicit { spacings: Vec<f64>, velocities: Vec<f64> },
}

/// How the held acceleration noise relates to the step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseScaling {
    /// `noise_std` is the per-step standard deviation, independent of `dt`.
    #[default]
    PerStep,
    /// Per-step std is `noise_std * sqrt(reference_dt / dt)`, so the
    /// integrated noise intensity does not depend on `dt`.
    Reference { reference_dt: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub time: f64,
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub road: RingRoad,
    pub controller: Controller,
    /// Equilibrium used for error coordinates in the metrics.
    pub reference: EquilibriumState,
    pub duration: f64,
    pub dt: f64,
    pub noise_std: f64,
    pub noise_scaling: NoiseScaling,
    pub perturbation: Option<Perturbation>,
    pub initial: InitialState,
    pub initially_active: bool,
    /// Controller toggles, applied at the first step starting at or after `time`.
    pub schedule: Vec<ScheduleEntry>,
    pub seed: u64,
    /// Record every `sample_every`-th step.
    pub sample_every: usize,
    pub a_min: f64,
    pub a_max: f64,
    pub emergency_braking: bool,
    pub weights: PerformanceWeights,
}

/// Equilibrium at `v_star` with the CAV spacing closing the ring.
pub fn reference_equilibrium(road: &RingRoad, v_star: f64) -> Result<EquilibriumState, SimError> {
    let hdv = road.hdv_spacings(v_star).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let cav = cav_spacing(road, v_star).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    Ok(EquilibriumState { v_star, s_star_hdv: hdv, s_star_cav: cav })
}

impl Scenario {
    /// Noiseless, uncontrolled 100 s run from the equilibrium at `v_star`.
    pub fn new(road: RingRoad, v_star: f64) -> Result<Self, SimError> {
        let reference = reference_equilibrium(&road, v_star)?;
        Ok(Self {
            road,
            controller: Controller::None,
            reference,
            duration: 100.0,
            dt: DEFAULT_DT,
            noise_std: 0.0,
            noise_scaling: NoiseScaling::PerStep,
            perturbation: None,
            initial: InitialState::Equilibrium { v: v_star },
            initially_active: true,
            schedule: Vec::new(),
            seed: 0,
            sample_every: 10,
            a_min: A_MIN,
            a_max: A_MAX,
            emergency_braking: true,
            weights: PerformanceWeights::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.road.n()
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn per_step_noise_std(&self) -> f64 {
        match self.noise_scaling {
            NoiseScaling::PerStep => self.noise_std,
            NoiseScaling::Reference { reference_dt } => self.noise_std * (reference_dt / self.dt).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        let n = self.n();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return bad(format!("duration {} shorter than dt {}", self.duration, self.dt));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std {} must be nonnegative", self.noise_std));
        }
        if let NoiseScaling::Reference { reference_dt } = self.noise_scaling {
            if !(reference_dt > 0.0 && reference_dt.is_finite()) {
                return bad(format!("noise reference dt {reference_dt} must be positive"));
            }
        }
        if self.sample_every == 0 {
            return bad("sample stride must be at least 1".into());
        }
        if !(self.a_min < 0.0 && self.a_max > 0.0) {
            return bad(format!("acceleration limits [{}, {}] must bracket zero", self.a_min, self.a_max));
        }
        if self.reference.s_star_hdv.len() + 1 != n {
            return bad("reference equilibrium does not match the vehicle count".into());
        }
        if let Some(p) = &self.perturbation {
            if !(1..=n).contains(&p.vehicle) {
                return bad(format!("perturbed vehicle {} outside 1..={n}", p.vehicle));
            }
            if !(p.start.is_finite() && p.duration >= 0.0 && p.acceleration.is_finite()) {
                return bad("perturbation times and acceleration must be finite".into());
            }
        }
        match &self.controller {
            Controller::Feedback(f) if f.s_star.len() != n => {
                return bad(format!("feedback targets for {} vehicles, ring has {n}", f.s_star.len()));
            }
            Controller::Command { kp, .. } if !(*kp > 0.0) => return bad(format!("kp = {kp} must be positive")),
            _ => {}
        }
        if self.schedule.iter().any(|e| !(e.time.is_finite() && e.time >= 0.0)) {
            return bad("schedule times must be finite and nonnegative".into());
        }
        match &self.initial {
            InitialState::Equilibrium { v } if !(*v >= 0.0) => bad(format!("initial velocity {v} is negative")),
            InitialState::RandomVelocity { center, spread } if !(*spread >= 0.0 && center - spread >= 0.0) => {
                bad(format!("initial velocities {center} +/- {spread} must stay nonnegative"))
            }
            InitialState::Explicit { spacings, velocities } => {
                if spacings.len() != n || velocities.len() != n {
                    return bad("explicit initial state has the wrong length".into());
                }
                let total: f64 = spacings.iter().sum();
                if (total - self.road.circumference).abs() > 1e-9 * self.road.circumference {
                    return bad(format!("initial spacings sum to {total}, not {}", self.road.circumference));
                }
                if spacings.iter().any(|&s| !(s > 0.0)) || velocities.iter().any(|&v| !(v >= 0.0)) {
                    return bad("initial spacings must be positive and velocities nonnegative".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}
