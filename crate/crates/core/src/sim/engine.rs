//! Fixed-step RK4 integration of the nonlinear ring.
//!
//! Positions are integrated unwrapped, so spacings telescope and always sum
//! to the circumference up to rounding. Per-step quantities (controller
//! state, perturbation, noise) are frozen at the start of each step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use super::scenario::{Controller, InitialState, Scenario};
use crate::error::SimError;
use crate::traffic::CarFollowingLaw;

/// Unwrapped positions and velocities, CAV first.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl SimState {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// `s_i = p_{i-1} - p_i`, with the CAV following the last vehicle.
    pub fn spacings(&self, circumference: f64) -> Vec<f64> {
        spacings_of(&self.positions, circumference)
    }

    pub fn from_spacings(spacings: &[f64], velocities: &[f64]) -> Self {
        let total: f64 = spacings[1..].iter().sum();
        let mut positions = Vec::with_capacity(spacings.len());
        let mut p = total;
        positions.push(p);
        for &s in &spacings[1..] {
            p -= s;
            positions.push(p);
        }
        Self { t: 0.0, positions, velocities: velocities.to_vec() }
    }
}

fn spacings_of(p: &[f64], circumference: f64) -> Vec<f64> {
    let n = p.len();
    (0..n).map(|i| spacing(p, i, circumference)).collect()
}

#[inline]
fn spacing(p: &[f64], i: usize, circumference: f64) -> f64 {
    if i == 0 {
        p[p.len() - 1] - p[0] + circumference
    } else {
        p[i - 1] - p[i]
    }
}

#[inline]
fn leader(i: usize, n: usize) -> usize {
    (i + n - 1) % n
}

/// `(v_i^2 - v_lead^2) / (2 s_i) >= |a_min|`.
pub fn emergency_braking_triggered(v: f64, v_lead: f64, s: f64, a_min: f64) -> bool {
    s > 0.0 && (v * v - v_lead * v_lead) / (2.0 * s) >= a_min.abs()
}

/// Conditions frozen over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMode {
    pub controller_active: bool,
    pub perturbation_active: bool,
    pub noise: Vec<f64>,
}

impl StepMode {
    pub fn quiet(n: usize, controller_active: bool) -> Self {
        Self { controller_active, perturbation_active: false, noise: vec![0.0; n] }
    }
}

/// Applied accelerations; `braking[i]` is set when emergency braking overrides.
pub fn accelerations(
    scn: &Scenario,
    mode: &StepMode,
    t: f64,
    p: &[f64],
    v: &[f64],
    out: &mut [f64],
    braking: &mut [bool],
) {
    let n = p.len();
    let l = scn.road.circumference;
    for i in 0..n {
        let s = spacing(p, i, l);
        let lead = leader(i, n);
        let mut a = if i == 0 && mode.controller_active {
            match &scn.controller {
                Controller::None => scn.road.vehicles[0].acceleration(s, v[lead] - v[0], v[0]),
                Controller::Feedback(f) => f.command(&spacings_of(p, l), v),
                Controller::Command { law, kp } => kp * (law.command(t, &spacings_of(p, l), v) - v[0]),
            }
        } else {
            scn.road.vehicles[i].acceleration(s, v[lead] - v[i], v[i])
        };
        if mode.perturbation_active && scn.perturbation.is_some_and(|pt| pt.vehicle == i + 1) {
            a = scn.perturbation.unwrap().acceleration;
        }
        a = (a + mode.noise[i]).clamp(scn.a_min, scn.a_max);
        braking[i] = scn.emergency_braking && emergency_braking_triggered(v[i], v[lead], s, scn.a_min);
        if braking[i] {
            a = scn.a_min;
        }
        // no reversing
        if v[i] <= 0.0 && a < 0.0 {
            a = 0.0;
        }
        out[i] = a;
    }
}

/// One RK4 step under a frozen mode. Returns the applied accelerations at
/// the start of the step and the emergency-braking flags there.
pub fn step(scn: &Scenario, mode: &StepMode, state: &SimState, dt: f64) -> (SimState, Vec<f64>, Vec<bool>) {
    let n = state.n();
    let t = state.t;
    let mut braking = vec![false; n];
    let mut scratch = vec![false; n];
    let (p0, v0) = (&state.positions, &state.velocities);

    let mut k1 = vec![0.0; n];
    accelerations(scn, mode, t, p0, v0, &mut k1, &mut braking);
    let stage = |base: &[f64], slope: &[f64], h: f64| -> Vec<f64> {
        base.iter().zip(slope).map(|(b, s)| b + h * s).collect()
    };

    let (p2, v2) = (stage(p0, v0, 0.5 * dt), stage(v0, &k1, 0.5 * dt));
    let mut k2 = vec![0.0; n];
    accelerations(scn, mode, t + 0.5 * dt, &p2, &v2, &mut k2, &mut scratch);

    let (p3, v3) = (stage(p0, &v2, 0.5 * dt), stage(v0, &k2, 0.5 * dt));
    let mut k3 = vec![0.0; n];
    accelerations(scn, mode, t + 0.5 * dt, &p3, &v3, &mut k3, &mut scratch);

    let (p4, v4) = (stage(p0, &v3, dt), stage(v0, &k3, dt));
    let mut k4 = vec![0.0; n];
    accelerations(scn, mode, t + dt, &p4, &v4, &mut k4, &mut scratch);

    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for i in 0..n {
        positions.push(p0[i] + dt / 6.0 * (v0[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]));
        velocities.push((v0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).max(0.0));
    }
    (SimState { t: t + dt, positions, velocities }, k1, braking)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    EmergencyBrake { vehicle: usize },
    ControllerActivated,
    ControllerDeactivated,
    PerturbationStart { vehicle: usize },
    PerturbationEnd { vehicle: usize },
    Collision { vehicle: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Sampled trajectory. Positions are wrapped into `[0, L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub circumference: f64,
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub spacings: Vec<Vec<f64>>,
    /// Applied CAV acceleration at each sample.
    pub u: Vec<f64>,
    pub events: Vec<Event>,
    pub collided: bool,
}

impl SimTrace {
    pub fn n(&self) -> usize {
        self.velocities.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, state: &SimState, u: f64) {
        let l = self.circumference;
        self.times.push(state.t);
        self.positions.push(state.positions.iter().map(|p| p.rem_euclid(l)).collect());
        self.velocities.push(state.velocities.clone());
        self.spacings.push(state.spacings(l));
        self.u.push(u);
    }

    /// Largest `|sum_i s_i - L|` over the samples.
    pub fn conservation_error(&self) -> f64 {
        self.spacings
            .iter()
            .map(|s| (s.iter().sum::<f64>() - self.circumference).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: SimTrace,
    pub metrics: Metrics,
}

pub fn initial_state(scn: &Scenario, rng: &mut ChaCha8Rng) -> Result<SimState, SimError> {
    let invalid = |e: crate::error::ModelError| SimError::InvalidScenario(e.to_string());
    let cav_rest = |hdv: Vec<f64>| {
        let s1 = scn.road.circumference - hdv.iter().sum::<f64>();
        std::iter::once(s1).chain(hdv).collect::<Vec<_>>()
    };
    let n = scn.n();
    let (spacings, velocities) = match &scn.initial {
        InitialState::Equilibrium { v } => (cav_rest(scn.road.hdv_spacings(*v).map_err(invalid)?), vec![*v; n]),
        InitialState::RandomVelocity { center, spread } => {
            let spacings = cav_rest(scn.road.hdv_spacings(*center).map_err(invalid)?);
            let velocities = if *spread > 0.0 {
                let dist = Uniform::new_inclusive(center - spread, center + spread)
                    .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            } else {
                vec![*center; n]
            };
            (spacings, velocities)
        }
        InitialState::Explicit { spacings, velocities } => (spacings.clone(), velocities.clone()),
    };
    if !(spacings[0] > 0.0) {
        return Err(SimError::InvalidScenario(format!("initial CAV spacing {} is not positive", spacings[0])));
    }
    Ok(SimState::from_spacings(&spacings, &velocities))
}

fn controller_active_at(scn: &Scenario, t: f64, dt: f64) -> bool {
    let mut active = scn.initially_active;
    let mut entries: Vec<_> = scn.schedule.iter().filter(|e| e.time <= t + 0.5 * dt).collect();
    entries.sort_by(|a, b| a.time.total_cmp(&b.time));
    if let Some(last) = entries.last() {
        active = last.active;
    }
    active && !matches!(scn.controller, Controller::None)
}

/// Integrate the scenario over its horizon. A collision stops the run and
/// returns the partial trace with `collided` set.
pub fn run(scn: &Scenario) -> Result<SimOutput, SimError> {
    scn.validate()?;
    let n = scn.n();
    let dt = scn.dt;
    let steps = scn.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let mut state = initial_state(scn, &mut rng)?;
    let noise_std = scn.per_step_noise_std();
    let noise = if noise_std > 0.0 {
        Some(Normal::new(0.0, noise_std).map_err(|e| SimError::InvalidScenario(e.to_string()))?)
    } else {
        None
    };

    let mut trace = SimTrace {
        circumference: scn.road.circumference,
        times: Vec::with_capacity(steps / scn.sample_every + 2),
        positions: Vec::new(),
        velocities: Vec::new(),
        spacings: Vec::new(),
        u: Vec::new(),
        events: Vec::new(),
        collided: false,
    };
    let mut was_active = scn.initially_active && !matches!(scn.controller, Controller::None);
    let mut was_perturbed = false;
    let mut was_braking = vec![false; n];
    let mut mode = StepMode::quiet(n, false);

    for k in 0..steps {
        let t = k as f64 * dt;
        state.t = t;
        let active = controller_active_at(scn, t, dt);
        if active != was_active {
            let kind = if active { EventKind::ControllerActivated } else { EventKind::ControllerDeactivated };
            trace.events.push(Event { time: t, kind });
            was_active = active;
        }
        let perturbed = scn.perturbation.is_some_and(|p| p.is_active(t));
        if perturbed != was_perturbed {
            let vehicle = scn.perturbation.map_or(0, |p| p.vehicle);
            let kind = if perturbed {
                EventKind::PerturbationStart { vehicle }
            } else {
                EventKind::PerturbationEnd { vehicle }
            };
            trace.events.push(Event { time: t, kind });
            was_perturbed = perturbed;
        }
        mode.controller_active = active;
        mode.perturbation_active = perturbed;
        match &noise {
            Some(d) => mode.noise.iter_mut().for_each(|w| *w = d.sample(&mut rng)),
            None => mode.noise.iter_mut().for_each(|w| *w = 0.0),
        }

        let (next, applied, braking) = step(scn, &mode, &state, dt);
        if k % scn.sample_every == 0 {
            trace.push(&state, applied[0]);
        }
        for i in 0..n {
            if braking[i] && !was_braking[i] {
                trace.events.push(Event { time: t, kind: EventKind::EmergencyBrake { vehicle: i + 1 } });
            }
        }
        was_braking = braking;
        state = next;

        let spacings = state.spacings(scn.road.circumference);
        if let Some(i) = spacings.iter().position(|&s| !(s > 0.0)) {
            trace.events.push(Event { time: state.t, kind: EventKind::Collision { vehicle: i + 1 } });
            trace.collided = true;
            trace.push(&state, applied[0]);
            break;
        }
    }
    if !trace.collided {
        state.t = steps as f64 * dt;
        let mut a = vec![0.0; n];
        let mut b = vec![false; n];
        accelerations(scn, &mode, state.t, &state.positions, &state.velocities, &mut a, &mut b);
        if steps % scn.sample_every == 0 {
            trace.push(&state, a[0]);
        }
    }
    let metrics = compute_metrics(scn, &trace)?;
    Ok(SimOutput { trace, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{LinearFeedback, Perturbation, ScheduleEntry};
    use crate::traffic::{Heterogeneity, OvmParams, RingRoad};

    fn homogeneous(v: f64) -> Scenario {
        Scenario::new(RingRoad::homogeneous(20, 400.0, OvmParams::default()).unwrap(), v).unwrap()
    }

    #[test]
    fn braking_rule_example() {
        assert!(emergency_braking_triggered(10.0, 0.0, 5.0, -5.0));
        assert!(!emergency_braking_triggered(10.0, 10.0, 5.0, -5.0));
        assert!(!emergency_braking_triggered(10.0, 0.0, 20.0, -5.0));
    }

    #[test]
    fn braking_overrides_the_law() {
        let mut scn = homogeneous(15.0);
        scn.road = RingRoad::homogeneous(2, 40.0, OvmParams::default()).unwrap();
        let state = SimState::from_spacings(&[35.0, 5.0], &[0.0, 10.0]);
        let mut a = vec![0.0; 2];
        let mut b = vec![false; 2];
        accelerations(&scn, &StepMode::quiet(2, false), 0.0, &state.positions, &state.velocities, &mut a, &mut b);
        assert_eq!(b, vec![false, true]);
        assert_eq!(a[1], -5.0);
    }

    #[test]
    fn positions_reproduce_spacings() {
        let s = [20.0, 18.0, 22.0, 20.0];
        let st = SimState::from_spacings(&s, &[1.0; 4]);
        let back = st.spacings(80.0);
        for (a, b) in back.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(*st.positions.last().unwrap(), 0.0);
    }

    #[test]
    fn equilibrium_is_a_fixed_point_per_step() {
        let road = RingRoad::heterogeneous(20, 400.0, OvmParams::default(), Heterogeneity::default(), 3).unwrap();
        let mut scn = Scenario::new(road, 15.0).unwrap();
        let gain: Vec<f64> = (0..40).map(|k| 0.05 * ((k % 7) as f64 - 3.0)).collect();
        let r = &scn.reference;
        scn.controller = Controller::Feedback(LinearFeedback::new(gain, 15.0, r.spacings()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s0 = initial_state(&scn, &mut rng).unwrap();
        let (s1, _, _) = step(&scn, &StepMode::quiet(20, true), &s0, 0.01);
        let d0 = s0.spacings(400.0);
        let d1 = s1.spacings(400.0);
        for i in 0..20 {
            assert!((d1[i] - d0[i]).abs() < 1e-12);
            assert!((s1.velocities[i] - s0.velocities[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn uncontrolled_equilibrium_trace_is_constant() {
        let mut scn = homogeneous(15.0);
        scn.duration = 20.0;
        let out = run(&scn).unwrap();
        for (v, s) in out.trace.velocities.iter().zip(&out.trace.spacings) {
            assert!(v.iter().all(|x| (x - 15.0).abs() < 1e-10));
            assert!(s.iter().all(|x| (x - 20.0).abs() < 1e-9));
        }
        assert!(out.trace.events.is_empty());
        assert_eq!(out.trace.len(), 201);
    }

    #[test]
    fn same_seed_same_trace() {
        let mut scn = homogeneous(15.0);
        scn.duration = 30.0;
        scn.noise_std = 0.2;
        scn.seed = 11;
        let a = run(&scn).unwrap().trace;
        let b = run(&scn).unwrap().trace;
        assert_eq!(a, b);
        scn.seed = 12;
        assert_ne!(run(&scn).unwrap().trace, a);
    }

    #[test]
    fn schedule_and_perturbation_are_logged() {
        let mut scn = homogeneous(15.0);
        scn.duration = 30.0;
        let r = &scn.reference;
        scn.controller = Controller::Feedback(LinearFeedback::new(vec![0.0; 40], 15.0, r.spacings()).unwrap());
        scn.initially_active = false;
        scn.schedule = vec![ScheduleEntry { time: 10.0, active: true }, ScheduleEntry { time: 20.0, active: false }];
        scn.perturbation = Some(Perturbation { vehicle: 5, start: 2.0, acceleration: -3.0, duration: 3.0 });
        let out = run(&scn).unwrap();
        let kinds: Vec<_> = out.trace.events.iter().filter(|e| !matches!(e.kind, EventKind::EmergencyBrake { .. })).collect();
        let expect = [
            (2.0, EventKind::PerturbationStart { vehicle: 5 }),
            (5.0, EventKind::PerturbationEnd { vehicle: 5 }),
            (10.0, EventKind::ControllerActivated),
            (20.0, EventKind::ControllerDeactivated),
        ];
        assert_eq!(kinds.len(), expect.len());
        for (e, (t, k)) in kinds.iter().zip(expect) {
            assert!((e.time - t).abs() < 1e-9, "{e:?}");
            assert_eq!(e.kind, k);
        }
    }

    #[test]
    fn perturbed_vehicle_follows_the_imposed_deceleration() {
        let mut scn = homogeneous(15.0);
        scn.duration = 3.0;
        scn.sample_every = 1;
        scn.perturbation = Some(Perturbation { vehicle: 4, start: 0.0, acceleration: -3.0, duration: 3.0 });
        let out = run(&scn).unwrap();
        let v = out.trace.velocities.last().unwrap()[3];
        assert!((v - 6.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn head_on_gap_closure_is_flagged() {
        let mut scn = homogeneous(15.0);
        scn.road = RingRoad::homogeneous(2, 40.0, OvmParams::default()).unwrap();
        scn.reference = crate::sim::scenario::reference_equilibrium(&scn.road, 15.0).unwrap();
        scn.emergency_braking = false;
        scn.initial = InitialState::Explicit { spacings: vec![39.5, 0.5], velocities: vec![0.0, 20.0] };
        let out = run(&scn).unwrap();
        assert!(out.trace.collided);
        assert!(matches!(out.trace.events.last().unwrap().kind, EventKind::Collision { vehicle: 2 }));
        assert!(out.trace.times.last().unwrap() < &1.0);
    }
}
