//! Experiment configuration.
//!
//! A single TOML document with one table per pipeline stage. Unknown keys are
//! rejected and every physical quantity carries its unit in the key name.
//!
//! ```toml
//! [model]
//! n = 20
//! circumference_m = 400.0
//! seed = 7                     # heterogeneity draw
//! alpha_per_s = 0.6
//! beta_per_s = 0.9
//! v_max_mps = 30.0
//! s_st_m = 5.0
//! s_go_m = 35.0
//!
//! [model.heterogeneity]        # optional: base + U[-w, w] per vehicle
//! alpha_half_width_per_s = 0.1
//! beta_half_width_per_s = 0.1
//! s_go_half_width_m = 5.0
//!
//! [model.per_vehicle]          # optional: arrays of length n, slot 1 first
//! alpha_per_s = [0.6, 0.6]
//!
//! [target]
//! v_star_mps = 15.0
//! cav_spacing_m = 20.0         # optional override
//!
//! [analysis]
//! rank_tol = 1e-8
//!
//! [controller]
//! enabled = true
//! gamma_s = 0.03
//! gamma_v = 0.15
//! gamma_u = 1.0
//! topology = "ahead-behind"    # or "full", "explicit"
//! ahead = 5
//! behind = 5
//! vehicles = [1, 2, 20]        # only for "explicit"
//! gain_file = "synthesis.json" # optional, reuse a synthesized gain
//!
//! [scenario]
//! duration_s = 100.0
//! dt_s = 0.01
//! noise_std_mps2 = 0.0
//! noise_reference_dt_s = 0.1   # optional, rescales noise to this step
//! initial = "equilibrium"      # or "random-velocity"
//! initial_velocity_mps = 15.0  # defaults to the target velocity
//! initial_spread_mps = 4.0
//! controller_initially_active = true
//! schedule = [{ time_s = 300.0, active = true }]
//! seed = 0
//! sample_every = 10
//! emergency_braking = true
//!
//! [scenario.perturbation]      # optional
//! vehicle = 2
//! start_s = 20.0
//! acceleration_mps2 = -3.0
//! duration_s = 3.0
//!
//! [output]
//! dir = "out"
//! write_traces = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ringflow::sparsity::Topology;
use ringflow::synthesis::PerformanceWeights;
use ringflow::traffic::{Heterogeneity, OvmParams, RingRoad};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n: usize,
    pub circumference_m: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::alpha")]
    pub alpha_per_s: f64,
    #[serde(default = "defaults::beta")]
    pub beta_per_s: f64,
    #[serde(default = "defaults::v_max")]
    pub v_max_mps: f64,
    #[serde(default = "defaults::s_st")]
    pub s_st_m: f64,
    #[serde(default = "defaults::s_go")]
    pub s_go_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heterogeneity: Option<HeterogeneitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_vehicle: Option<PerVehicleSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneitySection {
    #[serde(default = "defaults::alpha_width")]
    pub alpha_half_width_per_s: f64,
    #[serde(default = "defaults::beta_width")]
    pub beta_half_width_per_s: f64,
    #[serde(default = "defaults::s_go_width")]
    pub s_go_half_width_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerVehicleSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_per_s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_per_s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max_mps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_st_m: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_go_m: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    #[serde(default = "defaults::v_star")]
    pub v_star_mps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cav_spacing_m: Option<f64>,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self { v_star_mps: defaults::v_star(), cav_spacing_m: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "defaults::rank_tol")]
    pub rank_tol: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { rank_tol: defaults::rank_tol() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Full,
    AheadBehind,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default = "defaults::yes")]
    pub enabled: bool,
    #[serde(default = "defaults::gamma_s")]
    pub gamma_s: f64,
    #[serde(default = "defaults::gamma_v")]
    pub gamma_v: f64,
    #[serde(default = "defaults::gamma_u")]
    pub gamma_u: f64,
    #[serde(default = "defaults::topology")]
    pub topology: TopologyKind,
    #[serde(default = "defaults::reach")]
    pub ahead: usize,
    #[serde(default = "defaults::reach")]
    pub behind: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicles: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_file: Option<PathBuf>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            enabled: true,
            gamma_s: defaults::gamma_s(),
            gamma_v: defaults::gamma_v(),
            gamma_u: defaults::gamma_u(),
            topology: defaults::topology(),
            ahead: defaults::reach(),
            behind: defaults::reach(),
            vehicles: None,
            gain_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Equilibrium,
    RandomVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleItem {
    pub time_s: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    pub vehicle: usize,
    pub start_s: f64,
    pub acceleration_mps2: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default = "defaults::duration")]
    pub duration_s: f64,
    #[serde(default = "defaults::dt")]
    pub dt_s: f64,
    #[serde(default)]
    pub noise_std_mps2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_reference_dt_s: Option<f64>,
    #[serde(default = "defaults::initial")]
    pub initial: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_velocity_mps: Option<f64>,
    #[serde(default = "defaults::spread")]
    pub initial_spread_mps: f64,
    #[serde(default = "defaults::yes")]
    pub controller_initially_active: bool,
    #[serde(default)]
    pub schedule: Vec<ScheduleItem>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::sample_every")]
    pub sample_every: usize,
    #[serde(default = "defaults::yes")]
    pub emergency_braking: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSection>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            duration_s: defaults::duration(),
            dt_s: defaults::dt(),
            noise_std_mps2: 0.0,
            noise_reference_dt_s: None,
            initial: defaults::initial(),
            initial_velocity_mps: None,
            initial_spread_mps: defaults::spread(),
            controller_initially_active: true,
            schedule: Vec::new(),
            seed: 0,
            sample_every: defaults::sample_every(),
            emergency_braking: true,
            perturbation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "defaults::out_dir")]
    pub dir: PathBuf,
    #[serde(default = "defaults::yes")]
    pub write_traces: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: defaults::out_dir(), write_traces: true }
    }
}

mod defaults {
    use std::path::PathBuf;

    use super::{InitialKind, TopologyKind};

    pub fn alpha() -> f64 {
        0.6
    }
    pub fn beta() -> f64 {
        0.9
    }
    pub fn v_max() -> f64 {
        30.0
    }
    pub fn s_st() -> f64 {
        5.0
    }
    pub fn s_go() -> f64 {
        35.0
    }
    pub fn alpha_width() -> f64 {
        0.1
    }
    pub fn beta_width() -> f64 {
        0.1
    }
    pub fn s_go_width() -> f64 {
        5.0
    }
    pub fn v_star() -> f64 {
        15.0
    }
    pub fn rank_tol() -> f64 {
        ringflow::controllability::DEFAULT_RANK_TOL
    }
    pub fn gamma_s() -> f64 {
        0.03
    }
    pub fn gamma_v() -> f64 {
        0.15
    }
    pub fn gamma_u() -> f64 {
        1.0
    }
    pub fn topology() -> TopologyKind {
        TopologyKind::AheadBehind
    }
    pub fn reach() -> usize {
        5
    }
    pub fn duration() -> f64 {
        100.0
    }
    pub fn dt() -> f64 {
        0.01
    }
    pub fn initial() -> InitialKind {
        InitialKind::Equilibrium
    }
    pub fn spread() -> f64 {
        4.0
    }
    pub fn sample_every() -> usize {
        10
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn yes() -> bool {
        true
    }
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub out: Option<PathBuf>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn require(ok: bool, field: &str, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(field, msg))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.scenario.seed = seed;
        }
        if let Some(dt) = o.dt {
            self.scenario.dt_s = dt;
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that do not need the model built.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        require(m.n >= 2, "model.n", "a ring needs at least two vehicles")?;
        require(m.circumference_m > 0.0 && m.circumference_m.is_finite(), "model.circumference_m", "must be positive")?;
        if let Some(h) = &m.heterogeneity {
            for (name, w) in [
                ("model.heterogeneity.alpha_half_width_per_s", h.alpha_half_width_per_s),
                ("model.heterogeneity.beta_half_width_per_s", h.beta_half_width_per_s),
                ("model.heterogeneity.s_go_half_width_m", h.s_go_half_width_m),
            ] {
                require(w >= 0.0 && w.is_finite(), name, "must be non-negative")?;
            }
        }
        if let Some(pv) = &m.per_vehicle {
            for (name, arr) in pv.arrays() {
                if let Some(a) = arr {
                    require(
                        a.len() == m.n,
                        &format!("model.per_vehicle.{name}"),
                        &format!("expected {} entries, got {}", m.n, a.len()),
                    )?;
                }
            }
        }
        let t = &self.target;
        require(t.v_star_mps >= 0.0 && t.v_star_mps.is_finite(), "target.v_star_mps", "must be non-negative")?;
        if let Some(s1) = t.cav_spacing_m {
            require(s1 > 0.0 && s1.is_finite(), "target.cav_spacing_m", "must be positive")?;
        }
        require(self.analysis.rank_tol > 0.0, "analysis.rank_tol", "must be positive")?;

        let c = &self.controller;
        for (name, g) in [("controller.gamma_s", c.gamma_s), ("controller.gamma_v", c.gamma_v), ("controller.gamma_u", c.gamma_u)] {
            require(g > 0.0 && g.is_finite(), name, "must be positive")?;
        }
        match (c.topology, &c.vehicles) {
            (TopologyKind::Explicit, None) => return Err(invalid("controller.vehicles", "required for an explicit topology")),
            (TopologyKind::Explicit, Some(v)) => {
                require(v.contains(&1), "controller.vehicles", "must include vehicle 1")?;
                require(v.iter().all(|&i| (1..=m.n).contains(&i)), "controller.vehicles", "indices must lie in 1..=n")?;
            }
            (_, Some(_)) => return Err(invalid("controller.vehicles", "only valid with topology = \"explicit\"")),
            _ => {}
        }

        let s = &self.scenario;
        require(s.duration_s > 0.0 && s.duration_s.is_finite(), "scenario.duration_s", "must be positive")?;
        require(s.dt_s > 0.0 && s.dt_s.is_finite(), "scenario.dt_s", "must be positive")?;
        require(s.noise_std_mps2 >= 0.0 && s.noise_std_mps2.is_finite(), "scenario.noise_std_mps2", "must be non-negative")?;
        if let Some(r) = s.noise_reference_dt_s {
            require(r > 0.0 && r.is_finite(), "scenario.noise_reference_dt_s", "must be positive")?;
        }
        require(s.initial_spread_mps >= 0.0, "scenario.initial_spread_mps", "must be non-negative")?;
        require(s.sample_every >= 1, "scenario.sample_every", "must be at least 1")?;
        if let Some(p) = &s.perturbation {
            require((1..=m.n).contains(&p.vehicle), "scenario.perturbation.vehicle", "must lie in 1..=n")?;
            require(p.duration_s >= 0.0, "scenario.perturbation.duration_s", "must be non-negative")?;
        }
        Ok(())
    }

    pub fn weights(&self) -> PerformanceWeights {
        PerformanceWeights {
            gamma_s: self.controller.gamma_s,
            gamma_v: self.controller.gamma_v,
            gamma_u: self.controller.gamma_u,
            per_vehicle: None,
        }
    }

    pub fn topology(&self) -> Topology {
        let c = &self.controller;
        match c.topology {
            TopologyKind::Full => Topology::Full,
            TopologyKind::AheadBehind => Topology::AheadBehind { ahead: c.ahead, behind: c.behind },
            TopologyKind::Explicit => Topology::Explicit(c.vehicles.clone().unwrap_or_default()),
        }
    }

    /// Per-vehicle OVM parameters, with the failing field named on error.
    pub fn road(&self) -> Result<RingRoad, CliError> {
        let m = &self.model;
        let base = OvmParams {
            alpha: m.alpha_per_s,
            beta: m.beta_per_s,
            v_max: m.v_max_mps,
            s_st: m.s_st_m,
            s_go: m.s_go_m,
        };
        base.validate().map_err(|e| invalid("model", e))?;
        let mut vehicles = match &m.heterogeneity {
            Some(h) => {
                let spread = Heterogeneity {
                    alpha: h.alpha_half_width_per_s,
                    beta: h.beta_half_width_per_s,
                    s_go: h.s_go_half_width_m,
                };
                RingRoad::heterogeneous(m.n, m.circumference_m, base, spread, m.seed)
                    .map_err(|e| invalid("model.heterogeneity", e))?
                    .vehicles
            }
            None => vec![base; m.n],
        };
        if let Some(pv) = &m.per_vehicle {
            for (i, p) in vehicles.iter_mut().enumerate() {
                let pick = |a: &Option<Vec<f64>>, d: f64| a.as_ref().map_or(d, |a| a[i]);
                p.alpha = pick(&pv.alpha_per_s, p.alpha);
                p.beta = pick(&pv.beta_per_s, p.beta);
                p.v_max = pick(&pv.v_max_mps, p.v_max);
                p.s_st = pick(&pv.s_st_m, p.s_st);
                p.s_go = pick(&pv.s_go_m, p.s_go);
            }
        }
        for (i, p) in vehicles.iter().enumerate() {
            p.validate().map_err(|e| invalid(&format!("model.per_vehicle (vehicle {})", i + 1), e))?;
        }
        RingRoad::new(m.circumference_m, vehicles).map_err(|e| invalid("model", e))
    }

    pub fn sha256(&self) -> String {
        sha256_json(self)
    }

    /// Hash of everything that determines the linearized model.
    pub fn model_sha256(&self) -> String {
        sha256_json(&(&self.model, &self.target))
    }
}

impl PerVehicleSection {
    fn arrays(&self) -> [(&'static str, &Option<Vec<f64>>); 5] {
        [
            ("alpha_per_s", &self.alpha_per_s),
            ("beta_per_s", &self.beta_per_s),
            ("v_max_mps", &self.v_max_mps),
            ("s_st_m", &self.s_st_m),
            ("s_go_m", &self.s_go_m),
        ]
    }
}

pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    format!("{:x}", Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\nn = 20\ncircumference_m = 400.0\n";

    #[test]
    fn minimal_document_takes_defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.target.v_star_mps, 15.0);
        assert_eq!(c.topology(), Topology::AheadBehind { ahead: 5, behind: 5 });
        let road = c.road().unwrap();
        assert_eq!(road.n(), 20);
        assert!(road.vehicles.iter().all(|p| *p == OvmParams::default()));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::parse("[model]\nn = 20\ncircumference_m = 400.0\nalpha = 0.6\n").unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
        assert!(Config::parse(&format!("{MINIMAL}[target]\nv_star = 15.0\n")).is_err());
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let text = format!(
            "{MINIMAL}[model.heterogeneity]\n[controller]\ntopology = \"explicit\"\nvehicles = [1, 2, 20]\n\
             [scenario]\nschedule = [{{ time_s = 3.0, active = false }}]\n[scenario.perturbation]\n\
             vehicle = 4\nstart_s = 1.0\nacceleration_mps2 = -3.0\nduration_s = 2.0\n"
        );
        let c = Config::parse(&text).unwrap();
        c.validate().unwrap();
        let again = Config::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.sha256(), again.sha256());
    }

    #[test]
    fn per_vehicle_arrays_must_match_n() {
        let c = Config::parse(&format!("{MINIMAL}[model.per_vehicle]\nalpha_per_s = [0.6, 0.7]\n")).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("model.per_vehicle.alpha_per_s"), "{err}");
    }

    #[test]
    fn per_vehicle_override_lands_on_the_right_slot() {
        let text = "[model]\nn = 2\ncircumference_m = 60.0\n[model.per_vehicle]\ns_go_m = [35.0, 40.0]\n";
        let road = Config::parse(text).unwrap().road().unwrap();
        assert_eq!(road.vehicles[0].s_go, 35.0);
        assert_eq!(road.vehicles[1].s_go, 40.0);
    }

    #[test]
    fn bad_parameters_name_the_field() {
        let c = Config::parse(&format!("{MINIMAL}")).unwrap();
        let mut bad = c.clone();
        bad.model.alpha_per_s = 0.0;
        assert!(matches!(bad.road(), Err(CliError::Config(_))));
        let mut bad = c.clone();
        bad.controller.topology = TopologyKind::Explicit;
        assert!(bad.validate().unwrap_err().to_string().contains("controller.vehicles"));
        let mut bad = c;
        bad.scenario.dt_s = -1.0;
        assert!(bad.validate().unwrap_err().to_string().contains("scenario.dt_s"));
    }

    #[test]
    fn overrides_change_the_hash_but_not_the_model_hash() {
        let mut c = Config::parse(MINIMAL).unwrap();
        let (h, mh) = (c.sha256(), c.model_sha256());
        c.apply(&Overrides { seed: Some(3), dt: Some(0.005), out: None });
        assert_eq!(c.scenario.seed, 3);
        assert_ne!(c.sha256(), h);
        assert_eq!(c.model_sha256(), mh);
    }
}
