use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("equilibrium speed {v_star} m/s outside [0, {v_max}] m/s")]
    Domain { v_star: f64, v_max: f64 },
    #[error("degenerate linearization at v* = {v_star} m/s (zero spacing sensitivity)")]
    DegenerateLinearization { v_star: f64 },
    #[error("infeasible equilibrium: CAV spacing would be {cav_spacing:.6} m")]
    InfeasibleEquilibrium { cav_spacing: f64 },
    #[error("a ring needs at least two vehicles, got {0}")]
    TooFewVehicles(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("v* = {v_star} m/s is not reachable; maximum reachable velocity is {v_max:.6} m/s")]
    Unreachable { v_star: f64, v_max: f64 },
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("eigenvalue {0} is outside the domain of the test")]
    Domain(String),
    #[error("numerical failure: {reason} (condition estimate {condition:.3e})")]
    Numerical { reason: String, condition: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("structured relaxation is infeasible for this topology")]
    StructuredInfeasible,
    #[error("solver did not converge: {status} after {iterations} iterations (primal residual {primal:.2e}, dual residual {dual:.2e}, gap {gap:.2e})")]
    Numerical { status: String, iterations: usize, primal: f64, dual: f64, gap: f64 },
    #[error("closed loop has unbounded H2 norm: {0}")]
    UnboundedNorm(String),
    #[error(transparent)]
    Sdp(#[from] ringflow_sdp::SdpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("export failed: {0}")]
    Export(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
