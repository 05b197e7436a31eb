use std::fmt::Write as _;
use std::path::Path;

use log::info;
use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use ringflow::controllability::{default_cav_coeffs, pbh_analysis, verify_eigenvalue_condition, Complex, PbhReport};
use ringflow::reach::{reach_report, ReachReport};
use ringflow::sim::experiments::{
    experiment_a, experiment_b, experiment_c, run_batch, A_DURATION, B_OFF, B_ON, C_BRAKE_DURATION, C_BRAKE_START,
    C_RECOVERY_THRESHOLD,
};
use ringflow::sim::metrics::{settle_time, window_mean, Metrics};
use ringflow::sim::scenario::{Controller, InitialState, LinearFeedback, NoiseScaling, Perturbation, Scenario, ScheduleEntry};
use ringflow::sim::{run, SimOutput};
use ringflow::sparsity::{topology_to_pattern, Topology};
use ringflow::synthesis::{closed_loop_h2, solve_structured_h2, SolverReport, SynthesisOptions};
use ringflow::traffic::{EquilibriumState, LinearHdvCoeffs, RingModel, RingRoad};
use ringflow::ModelError;

use crate::config::{Config, InitialKind};
use crate::error::CliError;
use crate::output::{OutDir, Stamp};

/// Samples recorded per simulated second in the canned experiments.
const EXPERIMENT_SAMPLE_PERIOD: f64 = 0.1;
const ZERO_EIGENVALUE_TOL: f64 = 1e-9;

pub struct Session {
    pub config: Config,
    pub allow_unreachable: bool,
}

struct Prepared {
    road: RingRoad,
    model: RingModel,
}

impl Session {
    fn prepare(&self) -> Result<Prepared, CliError> {
        let cfg = &self.config;
        let road = cfg.road()?;
        let v = cfg.target.v_star_mps;
        let reach = reach_report(&road, v)?;
        let model = match cfg.target.cav_spacing_m {
            Some(s1) => {
                if !reach.reachable && !self.allow_unreachable {
                    return Err(ModelError::Unreachable { v_star: v, v_max: reach.v_max }.into());
                }
                road.linearize_with_cav_spacing(v, s1)?
            }
            None if !reach.reachable => {
                let msg = ModelError::Unreachable { v_star: v, v_max: reach.v_max }.to_string();
                return Err(CliError::Infeasible(if self.allow_unreachable {
                    format!("{msg}; --allow-unreachable needs target.cav_spacing_m")
                } else {
                    msg
                }));
            }
            None => road.linearize(v)?,
        };
        Ok(Prepared { road, model })
    }

    fn out(&self) -> Result<OutDir, CliError> {
        OutDir::create(&self.config.output.dir)
    }

    fn analysis(&self, m: &RingModel) -> Result<AnalyzeDoc, CliError> {
        let cav = default_cav_coeffs(m);
        let report = pbh_analysis(m, &cav, self.config.analysis.rank_tol)?;
        let mut eigenvalue_condition = Vec::new();
        for z in &report.eigenvalues {
            let lambda: Complex64 = (*z).into();
            if lambda.norm() > ZERO_EIGENVALUE_TOL {
                eigenvalue_condition.push(EigenCheck { eigenvalue: *z, holds: verify_eigenvalue_condition(m, &cav, lambda)? });
            }
        }
        Ok(AnalyzeDoc {
            stamp: Stamp::new(&self.config, "analyze"),
            summary: analysis_summary(&report),
            n: m.n,
            v_star_mps: m.v_star,
            s_star_m: m.s_star.clone(),
            hdv_coeffs: m.coeffs.clone(),
            cav_coeffs: cav,
            eigenvalue_condition,
            report,
        })
    }

    pub fn analyze(&self) -> Result<String, CliError> {
        let p = self.prepare()?;
        let doc = self.analysis(&p.model)?;
        let out = self.out()?;
        let path = out.json("analysis.json", &doc)?;
        info!("wrote {}", path.display());
        Ok(doc.summary)
    }

    pub fn reach(&self) -> Result<String, CliError> {
        let cfg = &self.config;
        let road = cfg.road()?;
        let v = cfg.target.v_star_mps;
        let report = reach_report(&road, v)?;
        let doc = ReachDoc { stamp: Stamp::new(cfg, "reach"), report: report.clone() };
        let out = self.out()?;
        out.json("reach.json", &doc)?;
        let mut s = format!("v*_max = {:.8} m/s (bisection)", report.v_max);
        if let Some(c) = report.v_max_closed_form {
            let _ = write!(s, "; closed form {c:.8} m/s");
        }
        match report.cav_spacing {
            Some(s1) => {
                let _ = write!(s, "\nv* = {v} m/s: s1* = {s1:.6} m");
            }
            None => {
                let _ = write!(s, "\nv* = {v} m/s: outside the HDV speed range");
            }
        }
        if !report.reachable && !self.allow_unreachable {
            return Err(ModelError::Unreachable { v_star: v, v_max: report.v_max }.into());
        }
        let _ = write!(s, "; reachable: {}", report.reachable);
        Ok(s)
    }

    fn synthesis(&self, p: &Prepared) -> Result<SynthesisDoc, CliError> {
        let cfg = &self.config;
        let analysis = self.analysis(&p.model)?;
        if !analysis.report.is_stabilizable {
            return Err(CliError::Infeasible(format!("model is not stabilizable ({})", analysis.summary)));
        }
        let n = p.model.n;
        let topology = cfg.topology();
        let visible = topology.visible(n);
        let pattern = topology_to_pattern(&visible, n)?;
        let weights = cfg.weights();
        let result = solve_structured_h2(&p.model, &weights, &pattern, &SynthesisOptions::default())?;
        let h2 = closed_loop_h2(&p.model, &weights, &DVector::from_vec(result.k.clone()))?;
        Ok(SynthesisDoc {
            stamp: Stamp::new(cfg, "synthesize"),
            analysis_summary: analysis.summary,
            topology,
            visible: visible.into_iter().collect(),
            nonzero_blocks: result.nonzero_blocks(),
            gain: result.k.clone(),
            v_star_mps: p.model.v_star,
            s_star_m: p.model.s_star.clone(),
            certified_cost: result.certified_cost,
            h2_norm_squared: h2 * h2,
            structured: result.structured,
            x_min_eigenvalue: result.x_min_eigenvalue,
            lmi_max_eigenvalue: result.lmi_max_eigenvalue,
            solver: result.solver.clone(),
        })
    }

    pub fn synthesize(&self) -> Result<String, CliError> {
        let p = self.prepare()?;
        let doc = self.synthesis(&p)?;
        self.out()?.json("synthesis.json", &doc)?;
        Ok(format!(
            "certified cost {:.6e}; closed-loop H2 norm^2 {:.6e}; nonzero blocks: {}; visible vehicles: {:?}",
            doc.certified_cost, doc.h2_norm_squared, doc.nonzero_blocks, doc.visible
        ))
    }

    /// The CAV feedback law, from a gain file or a fresh synthesis.
    fn feedback(&self, p: &Prepared) -> Result<LinearFeedback, CliError> {
        let gain = match &self.config.controller.gain_file {
            Some(path) => self.load_gain(path, p.model.n)?,
            None => self.synthesis(p)?.gain,
        };
        Ok(LinearFeedback::from_model(&p.model, &gain)?)
    }

    fn load_gain(&self, path: &Path, n: usize) -> Result<Vec<f64>, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let doc: GainFile =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if doc.stamp.model_sha256 != self.config.model_sha256() {
            return Err(CliError::Config(format!(
                "{}: gain was synthesized for model {}, config describes model {}",
                path.display(),
                doc.stamp.model_sha256,
                self.config.model_sha256()
            )));
        }
        if doc.gain.len() != 2 * n {
            return Err(CliError::Config(format!("{}: gain has {} entries, expected {}", path.display(), doc.gain.len(), 2 * n)));
        }
        Ok(doc.gain)
    }

    fn scenario(&self, p: &Prepared, feedback: Option<LinearFeedback>) -> Result<Scenario, CliError> {
        let s = &self.config.scenario;
        let v0 = s.initial_velocity_mps.unwrap_or(p.model.v_star);
        let mut scn = Scenario::new(p.road.clone(), v0)?;
        scn.reference = model_equilibrium(&p.model);
        scn.weights = self.config.weights();
        scn.initial = match s.initial {
            InitialKind::Equilibrium => InitialState::Equilibrium { v: v0 },
            InitialKind::RandomVelocity => InitialState::RandomVelocity { center: v0, spread: s.initial_spread_mps },
        };
        scn.controller = feedback.map_or(Controller::None, Controller::Feedback);
        scn.duration = s.duration_s;
        scn.dt = s.dt_s;
        scn.noise_std = s.noise_std_mps2;
        self.apply_common(&mut scn);
        scn.initially_active = s.controller_initially_active;
        scn.schedule = s.schedule.iter().map(|e| ScheduleEntry { time: e.time_s, active: e.active }).collect();
        scn.sample_every = s.sample_every;
        scn.perturbation = s.perturbation.as_ref().map(|p| Perturbation {
            vehicle: p.vehicle,
            start: p.start_s,
            acceleration: p.acceleration_mps2,
            duration: p.duration_s,
        });
        scn.validate()?;
        Ok(scn)
    }

    /// Settings shared by free and canned runs.
    fn apply_common(&self, scn: &mut Scenario) {
        let s = &self.config.scenario;
        scn.seed = s.seed;
        scn.emergency_braking = s.emergency_braking;
        scn.weights = self.config.weights();
        if let Some(reference_dt) = s.noise_reference_dt_s {
            scn.noise_scaling = NoiseScaling::Reference { reference_dt };
        }
    }

    /// Canned scenarios take the configured step, sampled every 0.1 s.
    fn apply_experiment(&self, scn: &mut Scenario) {
        self.apply_common(scn);
        scn.dt = self.config.scenario.dt_s;
        scn.sample_every = ((EXPERIMENT_SAMPLE_PERIOD / scn.dt).round() as usize).max(1);
    }

    pub fn simulate(&self) -> Result<String, CliError> {
        let p = self.prepare()?;
        let feedback = if self.config.controller.enabled { Some(self.feedback(&p)?) } else { None };
        let scn = self.scenario(&p, feedback)?;
        let out = run(&scn)?;
        let dir = self.out()?;
        dir.config(&self.config)?;
        dir.run("trace", &out, &Stamp::new(&self.config, "simulate"), self.config.output.write_traces)?;
        Ok(run_summary("simulate", &out))
    }

    pub fn experiment(&self, which: Experiment) -> Result<String, CliError> {
        let p = self.prepare()?;
        let fb = self.feedback(&p)?;
        let dir = self.out()?;
        dir.config(&self.config)?;
        let stamp = Stamp::new(&self.config, &format!("experiment {which:?}"));
        let traces = self.config.output.write_traces;
        match which {
            Experiment::A => {
                let mut scn = experiment_a(&p.road, fb, self.config.scenario.seed)?;
                self.apply_experiment(&mut scn);
                let out = run(&scn)?;
                dir.run("experiment_a", &out, &stamp, traces)?;
                let mut s = run_summary("experiment A", &out);
                let _ = write!(s, "\nsettle time: {:?} s of {A_DURATION} s", out.metrics.settle_time);
                Ok(s)
            }
            Experiment::B => {
                let mut scn = experiment_b(&p.road, fb, self.config.scenario.seed)?;
                self.apply_experiment(&mut scn);
                let out = run(&scn)?;
                dir.run("experiment_b", &out, &stamp, traces)?;
                let std = &out.metrics.velocity_std_profile;
                let t = &out.trace.times;
                let phases = WavePhases {
                    before_on: window_mean(t, std, B_ON - 50.0, B_ON),
                    before_off: window_mean(t, std, B_OFF - 50.0, B_OFF),
                    end: window_mean(t, std, scn.duration - 50.0, scn.duration),
                };
                dir.json("experiment_b_phases.json", &PhasesDoc { stamp, velocity_std_mps: phases })?;
                Ok(format!(
                    "{}\nvelocity std (50 s windows): before on {:.4}, before off {:.4}, end {:.4} m/s",
                    run_summary("experiment B", &out),
                    phases.before_on,
                    phases.before_off,
                    phases.end
                ))
            }
            Experiment::C => self.sweep(&p, fb, &dir, stamp, traces),
        }
    }

    fn sweep(&self, p: &Prepared, fb: LinearFeedback, dir: &OutDir, stamp: Stamp, traces: bool) -> Result<String, CliError> {
        let n = p.road.n();
        let vehicles: Vec<usize> = (2..=n).collect();
        let mut scenarios = Vec::with_capacity(2 * vehicles.len());
        for &v in &vehicles {
            for controlled in [true, false] {
                let mut scn = experiment_c(&p.road, controlled.then(|| fb.clone()), v)?;
                self.apply_experiment(&mut scn);
                if controlled {
                    scn.reference = model_equilibrium(&p.model);
                }
                scenarios.push(scn);
            }
        }
        let outputs: Vec<SimOutput> = run_batch(&scenarios).into_iter().collect::<Result<_, _>>()?;
        let end = C_BRAKE_START + C_BRAKE_DURATION;
        let mut rows = Vec::with_capacity(vehicles.len());
        for (k, &v) in vehicles.iter().enumerate() {
            let (on, off) = (&outputs[2 * k], &outputs[2 * k + 1]);
            if traces {
                dir.run(&format!("experiment_c_v{v:02}_on"), on, &stamp, true)?;
                dir.run(&format!("experiment_c_v{v:02}_off"), off, &stamp, true)?;
            }
            rows.push(SweepRow {
                vehicle: v,
                recovery_time_s: settle_time(&on.trace, fb.v_star, C_RECOVERY_THRESHOLD, end).map(|t| t - end),
                controlled: on.metrics.clone(),
                uncontrolled: off.metrics.clone(),
            });
        }
        let mut csv = String::from(
            "vehicle,max_cav_spacing_on_m,lq_cost_on,max_cav_spacing_off_m,lq_cost_off,recovery_time_s,collided_on,collided_off\n",
        );
        for r in &rows {
            let rec = r.recovery_time_s.map_or(String::new(), |t| t.to_string());
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                r.vehicle,
                r.controlled.max_cav_spacing,
                r.controlled.lq_cost,
                r.uncontrolled.max_cav_spacing,
                r.uncontrolled.lq_cost,
                rec,
                r.controlled.collided,
                r.uncontrolled.collided
            );
        }
        dir.text("experiment_c_sweep.csv", &csv)?;
        dir.json("experiment_c_sweep.json", &SweepDoc { stamp, rows: &rows })?;
        let worst = rows.iter().map(|r| r.controlled.lq_cost / r.uncontrolled.lq_cost).fold(0.0, f64::max);
        let unrecovered = rows.iter().filter(|r| r.recovery_time_s.is_none()).count();
        Ok(format!(
            "experiment C: {} perturbation positions; worst controlled/uncontrolled cost ratio {worst:.4}; unrecovered: {unrecovered}",
            rows.len()
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    #[value(name = "C", alias = "c")]
    C,
}

fn model_equilibrium(m: &RingModel) -> EquilibriumState {
    EquilibriumState { v_star: m.v_star, s_star_hdv: m.s_star[1..].to_vec(), s_star_cav: m.s_star[0] }
}

fn fmt_eigenvalue(z: Complex) -> String {
    if z.re.hypot(z.im) <= ZERO_EIGENVALUE_TOL {
        "0".into()
    } else if z.im.abs() <= ZERO_EIGENVALUE_TOL {
        format!("{:.6}", z.re)
    } else {
        format!("{:.6}{:+.6}i", z.re, z.im)
    }
}

pub fn analysis_summary(r: &PbhReport) -> String {
    let modes: Vec<String> = r
        .uncontrollable_modes
        .iter()
        .map(|m| format!("λ={}, {}", fmt_eigenvalue(m.eigenvalue), if m.stable { "stable" } else { "unstable" }))
        .collect();
    let mut s = format!("stabilizable: {}; uncontrollable modes: {}", r.is_stabilizable, modes.len());
    if !modes.is_empty() {
        let _ = write!(s, " ({})", modes.join("; "));
    }
    s
}

fn run_summary(label: &str, out: &SimOutput) -> String {
    let m = &out.metrics;
    let mut s = format!(
        "{label}: {} samples; final mean velocity {:.4} m/s (spread {:.4}); LQ cost {:.6e}; max CAV spacing {:.3} m",
        out.trace.len(),
        m.final_mean_velocity,
        m.final_velocity_spread,
        m.lq_cost,
        m.max_cav_spacing
    );
    if m.emergency_brake_events > 0 {
        let _ = write!(s, "; emergency brakes: {}", m.emergency_brake_events);
    }
    if m.collided {
        let _ = write!(s, "; COLLISION, trace truncated at t = {:.2} s", out.trace.times.last().copied().unwrap_or(0.0));
    }
    s
}

#[derive(Debug, Serialize)]
struct EigenCheck {
    eigenvalue: Complex,
    holds: bool,
}

#[derive(Debug, Serialize)]
struct AnalyzeDoc {
    stamp: Stamp,
    summary: String,
    n: usize,
    v_star_mps: f64,
    s_star_m: Vec<f64>,
    hdv_coeffs: Vec<LinearHdvCoeffs>,
    cav_coeffs: LinearHdvCoeffs,
    /// Per nonzero eigenvalue of the transformed matrix.
    eigenvalue_condition: Vec<EigenCheck>,
    report: PbhReport,
}

#[derive(Debug, Serialize)]
struct ReachDoc {
    stamp: Stamp,
    report: ReachReport,
}

#[derive(Debug, Serialize)]
struct SynthesisDoc {
    stamp: Stamp,
    analysis_summary: String,
    topology: Topology,
    visible: Vec<usize>,
    nonzero_blocks: usize,
    gain: Vec<f64>,
    v_star_mps: f64,
    s_star_m: Vec<f64>,
    certified_cost: f64,
    h2_norm_squared: f64,
    structured: bool,
    x_min_eigenvalue: f64,
    lmi_max_eigenvalue: f64,
    solver: SolverReport,
}

/// The part of a synthesis document needed to reuse its gain.
#[derive(Debug, Deserialize)]
struct GainFile {
    stamp: Stamp,
    gain: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct WavePhases {
    before_on: f64,
    before_off: f64,
    end: f64,
}

#[derive(Debug, Serialize)]
struct PhasesDoc {
    stamp: Stamp,
    velocity_std_mps: WavePhases,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    vehicle: usize,
    recovery_time_s: Option<f64>,
    controlled: Metrics,
    uncontrolled: Metrics,
}

#[derive(Debug, Serialize)]
struct SweepDoc<'a> {
    stamp: Stamp,
    rows: &'a [SweepRow],
}

#[cfg(test)]
mod tests {
    use super::*;
    use ringflow::controllability::UncontrollableMode;

    #[test]
    fn eigenvalue_formatting() {
        assert_eq!(fmt_eigenvalue(Complex { re: 1e-12, im: -1e-12 }), "0");
        assert_eq!(fmt_eigenvalue(Complex { re: -0.5, im: 0.0 }), "-0.500000");
        assert_eq!(fmt_eigenvalue(Complex { re: -0.5, im: 2.0 }), "-0.500000+2.000000i");
    }

    #[test]
    fn summary_lists_modes() {
        let cfg = Config::parse("[model]\nn = 20\ncircumference_m = 400.0\n").unwrap();
        let m = cfg.road().unwrap().linearize(15.0).unwrap();
        let mut r = pbh_analysis(&m, &default_cav_coeffs(&m), 1e-8).unwrap();
        assert_eq!(analysis_summary(&r), "stabilizable: true; uncontrollable modes: 1 (λ=0, stable)");
        r.uncontrollable_modes.push(UncontrollableMode {
            eigenvalue: Complex { re: 0.1, im: 0.0 },
            left_vector: vec![],
            stable: false,
        });
        r.is_stabilizable = false;
        assert!(analysis_summary(&r).ends_with("modes: 2 (λ=0, stable; λ=0.100000, unstable)"));
    }
}
