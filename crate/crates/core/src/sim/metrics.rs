use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::engine::{EventKind, SimTrace};
use super::scenario::Scenario;
use crate::error::SimError;
use crate::synthesis::build_performance;
use crate::traffic::EquilibriumState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Trapezoidal `int x'Qx + u'Ru dt` in error coordinates.
    pub lq_cost: f64,
    pub max_cav_spacing: f64,
    /// Time after which `max_i |v_i - v*| < settle_threshold` for the rest of the run.
    pub settle_time: Option<f64>,
    pub settle_threshold: f64,
    /// Standard deviation of the velocities across vehicles, per sample.
    pub velocity_std_profile: Vec<f64>,
    pub final_mean_velocity: f64,
    pub final_velocity_spread: f64,
    pub conservation_error: f64,
    pub emergency_brake_events: usize,
    pub collided: bool,
}

pub const DEFAULT_SETTLE_THRESHOLD: f64 = 0.1;

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Trapezoidal quadrature of `x'Qx + u'Ru` along the trace, with `x`
/// measured from `reference`.
pub fn lq_cost(trace: &SimTrace, q: &DMatrix<f64>, r: f64, reference: &EquilibriumState) -> f64 {
    let s_star = reference.spacings();
    let integrand = |k: usize| {
        let n = trace.velocities[k].len();
        let mut x = Vec::with_capacity(2 * n);
        for i in 0..n {
            x.push(trace.spacings[k][i] - s_star[i]);
            x.push(trace.velocities[k][i] - reference.v_star);
        }
        let mut acc = r * trace.u[k] * trace.u[k];
        for a in 0..x.len() {
            for b in 0..x.len() {
                if q[(a, b)] != 0.0 {
                    acc += x[a] * q[(a, b)] * x[b];
                }
            }
        }
        acc
    };
    let mut total = 0.0;
    let mut prev = if trace.is_empty() { 0.0 } else { integrand(0) };
    for k in 1..trace.len() {
        let cur = integrand(k);
        total += 0.5 * (trace.times[k] - trace.times[k - 1]) * (prev + cur);
        prev = cur;
    }
    total
}

/// First sample time from which every later sample has
/// `max_i |v_i - v*| < threshold`, considering only samples at or after `after`.
pub fn settle_time(trace: &SimTrace, v_star: f64, threshold: f64, after: f64) -> Option<f64> {
    let mut candidate = None;
    for (t, v) in trace.times.iter().zip(&trace.velocities) {
        if *t < after {
            continue;
        }
        let dev = v.iter().map(|x| (x - v_star).abs()).fold(0.0, f64::max);
        if dev < threshold {
            candidate.get_or_insert(*t);
        } else {
            candidate = None;
        }
    }
    candidate
}

/// Mean of `series` over samples with `t0 <= t <= t1`.
pub fn window_mean(times: &[f64], series: &[f64], t0: f64, t1: f64) -> f64 {
    let eps = 1e-9;
    let (sum, count) = times
        .iter()
        .zip(series)
        .filter(|(t, _)| **t >= t0 - eps && **t <= t1 + eps)
        .fold((0.0, 0usize), |(s, c), (_, x)| (s + x, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

pub fn compute_metrics(scn: &Scenario, trace: &SimTrace) -> Result<Metrics, SimError> {
    let (q, r) = build_performance(&scn.weights, scn.n()).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let v_star = scn.reference.v_star;
    let last = trace.velocities.last().cloned().unwrap_or_default();
    let mean = last.iter().sum::<f64>() / last.len().max(1) as f64;
    Ok(Metrics {
        lq_cost: lq_cost(trace, &q, r, &scn.reference),
        max_cav_spacing: trace.spacings.iter().map(|s| s[0]).fold(0.0, f64::max),
        settle_time: settle_time(trace, v_star, DEFAULT_SETTLE_THRESHOLD, 0.0),
        settle_threshold: DEFAULT_SETTLE_THRESHOLD,
        velocity_std_profile: trace.velocities.iter().map(|v| std_dev(v)).collect(),
        final_mean_velocity: mean,
        final_velocity_spread: last.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max),
        conservation_error: trace.conservation_error(),
        emergency_brake_events: trace
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::EmergencyBrake { .. }))
            .count(),
        collided: trace.collided,
    })
}
