//! Equilibrium velocities the ring can settle at.
//!
//! The HDV spacings are fixed by the target velocity, so the CAV takes up
//! whatever remains of the ring: `s1* = L - sum_{i>=2} s_i*(v*)`. The target
//! is reachable while this is positive.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::traffic::{equilibrium_spacing, RingRoad};

pub const BISECTION_TOL: f64 = 1e-8;

/// `s1* = L - sum_{i>=2} s_i*(v*)`; may be nonpositive.
pub fn cav_spacing(road: &RingRoad, v_star: f64) -> Result<f64, ModelError> {
    Ok(road.circumference - road.hdv_spacings(v_star)?.iter().sum::<f64>())
}

/// Largest `v` with `sum_{i>=2} s_i*(v) <= L`, by bisection to
/// [`BISECTION_TOL`]. Capped at the smallest HDV free-flow speed.
pub fn max_reachable_velocity(road: &RingRoad) -> Result<f64, ModelError> {
    let cap = road.hdvs().iter().map(|p| p.v_max).fold(f64::INFINITY, f64::min);
    let total = |v: f64| -> Result<f64, ModelError> {
        Ok(road.hdvs().iter().map(|p| equilibrium_spacing(p, v)).sum::<Result<f64, _>>()?)
    };
    let l = road.circumference;
    if total(0.0)? >= l {
        return Err(ModelError::InfeasibleEquilibrium { cav_spacing: l - total(0.0)? });
    }
    if total(cap)? < l {
        return Ok(cap);
    }
    let (mut lo, mut hi) = (0.0, cap);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if total(mid)? < l {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Closed form `V(L / (n - 1))` for identical HDVs; `None` otherwise.
pub fn homogeneous_max_velocity(road: &RingRoad) -> Option<f64> {
    let first = road.hdvs().first()?;
    if road.hdvs().iter().any(|p| p != first) {
        return None;
    }
    Some(first.desired_velocity(road.circumference / road.hdvs().len() as f64))
}

/// Reject targets at or beyond the maximum reachable velocity.
pub fn check_reachable(road: &RingRoad, v_star: f64) -> Result<ReachReport, ModelError> {
    let report = reach_report(road, v_star)?;
    if !(v_star >= 0.0 && v_star < report.v_max) {
        return Err(ModelError::Unreachable { v_star, v_max: report.v_max });
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachReport {
    pub v_star: f64,
    /// `None` when `v*` is outside every HDV's speed range.
    pub cav_spacing: Option<f64>,
    pub v_max: f64,
    pub v_max_closed_form: Option<f64>,
    pub reachable: bool,
}

pub fn reach_report(road: &RingRoad, v_star: f64) -> Result<ReachReport, ModelError> {
    let v_max = max_reachable_velocity(road)?;
    let cav = cav_spacing(road, v_star).ok();
    Ok(ReachReport {
        v_star,
        cav_spacing: cav,
        v_max,
        v_max_closed_form: homogeneous_max_velocity(road),
        reachable: v_star >= 0.0 && v_star < v_max && cav.is_some_and(|s| s > 0.0),
    })
}
