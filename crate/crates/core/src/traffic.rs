//! Car-following laws, equilibria, linearization and the linear ring model.
//!
//! Vehicle `i - 1` drives immediately ahead of vehicle `i`; vehicle `n` is
//! ahead of vehicle 1 (the CAV). Vehicles are stored 0-based, so slot 0 is the
//! CAV and slot `i` holds vehicle `i + 1`. The linear state is
//! `x = (s~1, v~1, s~2, v~2, ..., s~n, v~n)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

const FD_STEP: f64 = 1e-6;
const BISECTION_TOL: f64 = 1e-10;

/// A car-following law `a = F(s, s_dot, v)`.
pub trait CarFollowingLaw {
    fn acceleration(&self, s: f64, s_dot: f64, v: f64) -> f64;

    /// `(dF/ds, dF/ds_dot, dF/dv)`; central differences unless overridden.
    fn partials(&self, s: f64, s_dot: f64, v: f64) -> (f64, f64, f64) {
        let h = FD_STEP;
        let d = |f: &dyn Fn(f64) -> f64, x: f64| (f(x + h) - f(x - h)) / (2.0 * h);
        (
            d(&|x| self.acceleration(x, s_dot, v), s),
            d(&|x| self.acceleration(s, x, v), s_dot),
            d(&|x| self.acceleration(s, s_dot, x), v),
        )
    }

    /// Spacing interval that brackets every equilibrium.
    fn spacing_bracket(&self) -> (f64, f64);

    /// Largest speed with an equilibrium.
    fn max_speed(&self) -> f64;

    /// Spacing `s*` with `F(s*, 0, v*) = 0`. Assumes `F(., 0, v*)` is
    /// nondecreasing in `s`; the default bisects to 1e-10 m.
    fn equilibrium_spacing(&self, v_star: f64) -> Result<f64, ModelError> {
        if !(0.0..=self.max_speed()).contains(&v_star) {
            return Err(ModelError::Domain { v_star, v_max: self.max_speed() });
        }
        let (mut lo, mut hi) = self.spacing_bracket();
        let f = |s: f64| self.acceleration(s, 0.0, v_star);
        if f(lo) >= 0.0 {
            return Ok(lo);
        }
        if f(hi) < 0.0 {
            return Err(ModelError::Domain { v_star, v_max: self.max_speed() });
        }
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Optimal velocity model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvmParams {
    pub alpha: f64,
    pub beta: f64,
    pub v_max: f64,
    pub s_st: f64,
    pub s_go: f64,
}

impl Default for OvmParams {
    fn default() -> Self {
        Self { alpha: 0.6, beta: 0.9, v_max: 30.0, s_st: 5.0, s_go: 35.0 }
    }
}

impl OvmParams {
    pub fn new(alpha: f64, beta: f64, v_max: f64, s_st: f64, s_go: f64) -> Result<Self, ModelError> {
        let p = Self { alpha, beta, v_max, s_st, s_go };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let check = |name: &'static str, value: f64, ok: bool, reason: &'static str| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ModelError::InvalidParameter { name, value, reason })
            }
        };
        check("alpha", self.alpha, self.alpha > 0.0, "must be positive")?;
        check("beta", self.beta, self.beta > 0.0, "must be positive")?;
        check("v_max", self.v_max, self.v_max > 0.0, "must be positive")?;
        check("s_st", self.s_st, self.s_st.is_finite(), "must be finite")?;
        check("s_go", self.s_go, self.s_go > self.s_st, "must exceed s_st")
    }

    /// Desired velocity `V(s)`.
    pub fn desired_velocity(&self, s: f64) -> f64 {
        if s <= self.s_st {
            0.0
        } else if s >= self.s_go {
            self.v_max
        } else {
            0.5 * self.v_max * (1.0 - (PI * (s - self.s_st) / (self.s_go - self.s_st)).cos())
        }
    }

    /// `V'(s)`; zero outside the open interval `(s_st, s_go)`.
    pub fn desired_velocity_slope(&self, s: f64) -> f64 {
        if s <= self.s_st || s >= self.s_go {
            0.0
        } else {
            let w = PI / (self.s_go - self.s_st);
            0.5 * self.v_max * w * (w * (s - self.s_st)).sin()
        }
    }
}

/// `alpha (V(s) - v) + beta s_dot`.
pub fn ovm_acceleration(p: &OvmParams, s: f64, s_dot: f64, v: f64) -> f64 {
    p.alpha * (p.desired_velocity(s) - v) + p.beta * s_dot
}

impl CarFollowingLaw for OvmParams {
    fn acceleration(&self, s: f64, s_dot: f64, v: f64) -> f64 {
        ovm_acceleration(self, s, s_dot, v)
    }

    fn partials(&self, s: f64, _s_dot: f64, _v: f64) -> (f64, f64, f64) {
        (self.alpha * self.desired_velocity_slope(s), self.beta, -self.alpha)
    }

    fn spacing_bracket(&self) -> (f64, f64) {
        (self.s_st, self.s_go)
    }

    fn max_speed(&self) -> f64 {
        self.v_max
    }

    fn equilibrium_spacing(&self, v_star: f64) -> Result<f64, ModelError> {
        equilibrium_spacing(self, v_star)
    }
}

/// Closed-form inverse of the desired-velocity profile.
pub fn equilibrium_spacing(p: &OvmParams, v_star: f64) -> Result<f64, ModelError> {
    if !(0.0..=p.v_max).contains(&v_star) {
        return Err(ModelError::Domain { v_star, v_max: p.v_max });
    }
    let c = (1.0 - 2.0 * v_star / p.v_max).clamp(-1.0, 1.0);
    Ok(p.s_st + (p.s_go - p.s_st) / PI * c.acos())
}

/// Linearized HDV sensitivities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearHdvCoeffs {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl LinearHdvCoeffs {
    /// Requires `a1 > 0` and `a2 > a3 > 0`.
    pub fn new(a1: f64, a2: f64, a3: f64) -> Result<Self, ModelError> {
        let c = Self { a1, a2, a3 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = self.a1.is_finite() && self.a2.is_finite() && self.a3.is_finite();
        if !finite || self.a1 <= 0.0 {
            return Err(ModelError::InvalidParameter { name: "a1", value: self.a1, reason: "must be positive" });
        }
        if self.a3 <= 0.0 {
            return Err(ModelError::InvalidParameter { name: "a3", value: self.a3, reason: "must be positive" });
        }
        if self.a2 <= self.a3 {
            return Err(ModelError::InvalidParameter { name: "a2", value: self.a2, reason: "must exceed a3" });
        }
        Ok(())
    }

    /// Entry-wise mean.
    pub fn mean(coeffs: &[LinearHdvCoeffs]) -> Option<Self> {
        if coeffs.is_empty() {
            return None;
        }
        let k = coeffs.len() as f64;
        Some(Self {
            a1: coeffs.iter().map(|c| c.a1).sum::<f64>() / k,
            a2: coeffs.iter().map(|c| c.a2).sum::<f64>() / k,
            a3: coeffs.iter().map(|c| c.a3).sum::<f64>() / k,
        })
    }
}

/// Linearize any law at its equilibrium for `v_star`.
pub fn linearize_law<L: CarFollowingLaw + ?Sized>(law: &L, v_star: f64) -> Result<LinearHdvCoeffs, ModelError> {
    let s = law.equilibrium_spacing(v_star)?;
    let (ds, dsd, dv) = law.partials(s, 0.0, v_star);
    let c = LinearHdvCoeffs { a1: ds, a2: dsd - dv, a3: dsd };
    if !(c.a1 > 0.0) {
        return Err(ModelError::DegenerateLinearization { v_star });
    }
    c.validate()?;
    Ok(c)
}

/// `a1 = alpha V'(s*)`, `a2 = alpha + beta`, `a3 = beta`.
pub fn linearize_hdv(p: &OvmParams, v_star: f64) -> Result<LinearHdvCoeffs, ModelError> {
    p.validate()?;
    linearize_law(p, v_star)
}

/// Equilibrium speed and spacings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    pub v_star: f64,
    pub s_star_hdv: Vec<f64>,
    pub s_star_cav: f64,
}

impl EquilibriumState {
    /// All spacings, CAV first.
    pub fn spacings(&self) -> Vec<f64> {
        std::iter::once(self.s_star_cav).chain(self.s_star_hdv.iter().copied()).collect()
    }
}

/// Linearized ring: `x' = A x + B u + H w`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RingModel {
    pub n: usize,
    pub circumference: f64,
    pub v_star: f64,
    /// Equilibrium spacings, CAV first.
    pub s_star: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub h: DMatrix<f64>,
    /// HDV coefficients for vehicles 2..n.
    pub coeffs: Vec<LinearHdvCoeffs>,
}

pub fn spacing_index(vehicle: usize) -> usize {
    2 * vehicle
}

pub fn velocity_index(vehicle: usize) -> usize {
    2 * vehicle + 1
}

/// Assemble the block-circulant ring model. `hdv_spacings[k]` and
/// `coeffs[k]` belong to vehicle `k + 2`; the CAV spacing is whatever
/// remains of the circumference.
pub fn assemble_ring_model(
    coeffs: &[LinearHdvCoeffs],
    v_star: f64,
    circumference: f64,
    hdv_spacings: &[f64],
) -> Result<RingModel, ModelError> {
    let n = coeffs.len() + 1;
    if n < 2 {
        return Err(ModelError::TooFewVehicles(n));
    }
    if hdv_spacings.len() != coeffs.len() {
        return Err(ModelError::Shape(format!(
            "{} HDV coefficient sets but {} spacings",
            coeffs.len(),
            hdv_spacings.len()
        )));
    }
    for c in coeffs {
        c.validate()?;
    }
    let s_cav = circumference - hdv_spacings.iter().sum::<f64>();
    if !(s_cav > 0.0) {
        return Err(ModelError::InfeasibleEquilibrium { cav_spacing: s_cav });
    }

    let dim = 2 * n;
    let mut a = DMatrix::zeros(dim, dim);
    // CAV: s~1' = v~n - v~1, velocity row driven by u only
    a[(0, 1)] = -1.0;
    a[(0, velocity_index(n - 1))] = 1.0;
    for (k, c) in coeffs.iter().enumerate() {
        let i = k + 1;
        let (s, v, lead) = (spacing_index(i), velocity_index(i), velocity_index(i - 1));
        a[(s, v)] = -1.0;
        a[(s, lead)] = 1.0;
        a[(v, s)] = c.a1;
        a[(v, v)] = -c.a2;
        a[(v, lead)] = c.a3;
    }
    let mut b = DVector::zeros(dim);
    b[1] = 1.0;
    let mut h = DMatrix::zeros(dim, n);
    for i in 0..n {
        h[(velocity_index(i), i)] = 1.0;
    }
    let s_star = std::iter::once(s_cav).chain(hdv_spacings.iter().copied()).collect();
    Ok(RingModel { n, circumference, v_star, s_star, a, b, h, coeffs: coeffs.to_vec() })
}

impl RingModel {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn equilibrium(&self) -> EquilibriumState {
        EquilibriumState { v_star: self.v_star, s_star_hdv: self.s_star[1..].to_vec(), s_star_cav: self.s_star[0] }
    }

    /// Same linearization with the CAV's desired spacing replaced. The
    /// spacings then no longer sum to the circumference.
    pub fn with_cav_spacing(&self, s1: f64) -> Result<Self, ModelError> {
        if !(s1 > 0.0) {
            return Err(ModelError::InfeasibleEquilibrium { cav_spacing: s1 });
        }
        let mut m = self.clone();
        m.s_star[0] = s1;
        Ok(m)
    }

    /// Equilibrium state vector in absolute units `(s_i*, v*)`.
    pub fn equilibrium_vector(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |k, _| if k % 2 == 0 { self.s_star[k / 2] } else { self.v_star })
    }
}

/// Half-widths of the uniform perturbations applied to a base parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    pub alpha: f64,
    pub beta: f64,
    pub s_go: f64,
}

impl Default for Heterogeneity {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.1, s_go: 5.0 }
    }
}

/// Per-vehicle parameters on a ring. Slot 0 is the CAV; its parameters are
/// used only when it drives as a human.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingRoad {
    pub circumference: f64,
    pub vehicles: Vec<OvmParams>,
}

impl RingRoad {
    pub fn new(circumference: f64, vehicles: Vec<OvmParams>) -> Result<Self, ModelError> {
        if vehicles.len() < 2 {
            return Err(ModelError::TooFewVehicles(vehicles.len()));
        }
        if !(circumference > 0.0 && circumference.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "circumference",
                value: circumference,
                reason: "must be positive",
            });
        }
        for v in &vehicles {
            v.validate()?;
        }
        Ok(Self { circumference, vehicles })
    }

    pub fn homogeneous(n: usize, circumference: f64, p: OvmParams) -> Result<Self, ModelError> {
        Self::new(circumference, vec![p; n])
    }

    /// Draw `alpha`, `beta`, `s_go` for every vehicle as `base + U[-w, w]`,
    /// in vehicle order, from a ChaCha8 stream seeded with `seed`.
    pub fn heterogeneous(
        n: usize,
        circumference: f64,
        base: OvmParams,
        spread: Heterogeneity,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |w: f64| if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
        let vehicles = (0..n)
            .map(|_| {
                let alpha = base.alpha + draw(spread.alpha);
                let beta = base.beta + draw(spread.beta);
                let s_go = base.s_go + draw(spread.s_go);
                OvmParams { alpha, beta, s_go, ..base }
            })
            .collect();
        Self::new(circumference, vehicles)
    }

    pub fn n(&self) -> usize {
        self.vehicles.len()
    }

    pub fn hdvs(&self) -> &[OvmParams] {
        &self.vehicles[1..]
    }

    /// HDV equilibrium spacings at `v_star`.
    pub fn hdv_spacings(&self, v_star: f64) -> Result<Vec<f64>, ModelError> {
        self.hdvs().iter().map(|p| equilibrium_spacing(p, v_star)).collect()
    }

    /// Linearize every HDV at `v_star` and assemble the ring model.
    pub fn linearize(&self, v_star: f64) -> Result<RingModel, ModelError> {
        let coeffs = self.hdvs().iter().map(|p| linearize_hdv(p, v_star)).collect::<Result<Vec<_>, _>>()?;
        let spacings = self.hdv_spacings(v_star)?;
        assemble_ring_model(&coeffs, v_star, self.circumference, &spacings)
    }

    /// Linearize at `v_star` with the CAV's desired spacing fixed to `s1`
    /// instead of closing the ring. Works for unreachable targets too, since
    /// the matrices do not depend on `s1`.
    pub fn linearize_with_cav_spacing(&self, v_star: f64, s1: f64) -> Result<RingModel, ModelError> {
        let coeffs = self.hdvs().iter().map(|p| linearize_hdv(p, v_star)).collect::<Result<Vec<_>, _>>()?;
        let spacings = self.hdv_spacings(v_star)?;
        if !(s1 > 0.0) {
            return Err(ModelError::InfeasibleEquilibrium { cav_spacing: s1 });
        }
        let mut m = assemble_ring_model(&coeffs, v_star, spacings.iter().sum::<f64>() + s1, &spacings)?;
        m.circumference = self.circumference;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn defaults() -> OvmParams {
        OvmParams::default()
    }

    /// Independent equilibrium oracle: bisection on V alone.
    fn bisect_v(p: &OvmParams, v: f64) -> f64 {
        let (mut lo, mut hi) = (p.s_st, p.s_go);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p.desired_velocity(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn acceleration_examples() {
        let p = defaults();
        assert!(ovm_acceleration(&p, 20.0, 0.0, 15.0).abs() < 1e-12);
        assert_eq!(ovm_acceleration(&p, 5.0, 0.0, 0.0), 0.0);
        assert_eq!(ovm_acceleration(&p, 40.0, 0.0, 30.0), 0.0);
    }

    #[test]
    fn desired_velocity_is_continuous_at_breakpoints() {
        let p = defaults();
        let below = |x: f64| f64::from_bits(x.to_bits() - 1);
        let above = |x: f64| f64::from_bits(x.to_bits() + 1);
        assert!((p.desired_velocity(below(p.s_st)) - p.desired_velocity(above(p.s_st))).abs() < 1e-12);
        assert!((p.desired_velocity(below(p.s_go)) - p.desired_velocity(above(p.s_go))).abs() < 1e-12);
        assert_eq!(p.desired_velocity(p.s_st), 0.0);
        assert_eq!(p.desired_velocity(p.s_go), p.v_max);
    }

    #[test]
    fn equilibrium_examples() {
        let p = defaults();
        assert!((equilibrium_spacing(&p, 15.0).unwrap() - 20.0).abs() < 1e-12);
        assert!((equilibrium_spacing(&p, 15.0).unwrap() - bisect_v(&p, 15.0)).abs() < 1e-9);
        assert_eq!(equilibrium_spacing(&p, 0.0).unwrap(), 5.0);
        assert_eq!(equilibrium_spacing(&p, 30.0).unwrap(), 35.0);
        assert!(matches!(equilibrium_spacing(&p, 30.5), Err(ModelError::Domain { .. })));
        assert!(matches!(equilibrium_spacing(&p, -0.1), Err(ModelError::Domain { .. })));
    }

    #[test]
    fn generic_bisection_matches_closed_form() {
        struct Wrapped(OvmParams);
        impl CarFollowingLaw for Wrapped {
            fn acceleration(&self, s: f64, s_dot: f64, v: f64) -> f64 {
                ovm_acceleration(&self.0, s, s_dot, v)
            }
            fn spacing_bracket(&self) -> (f64, f64) {
                (self.0.s_st, self.0.s_go)
            }
            fn max_speed(&self) -> f64 {
                self.0.v_max
            }
        }
        let law = Wrapped(defaults());
        for v in [1.0, 7.5, 15.0, 22.0, 29.0] {
            let exact = equilibrium_spacing(&law.0, v).unwrap();
            assert!((law.equilibrium_spacing(v).unwrap() - exact).abs() < 1e-9);
        }
        let c = linearize_law(&law, 15.0).unwrap();
        let exact = linearize_hdv(&law.0, 15.0).unwrap();
        assert!((c.a1 - exact.a1).abs() < 1e-6 * exact.a1);
        assert!((c.a2 - exact.a2).abs() < 1e-6 * exact.a2);
        assert!((c.a3 - exact.a3).abs() < 1e-6 * exact.a3);
    }

    #[test]
    fn linearization_examples() {
        let c = linearize_hdv(&defaults(), 15.0).unwrap();
        assert!((c.a1 - 0.6 * PI / 2.0).abs() < 1e-12);
        assert!((c.a1 - 0.9425).abs() < 1e-4);
        assert_eq!(c.a2, 1.5);
        assert_eq!(c.a3, 0.9);
        assert!(matches!(linearize_hdv(&defaults(), 0.0), Err(ModelError::DegenerateLinearization { .. })));
        assert!(matches!(linearize_hdv(&defaults(), 30.0), Err(ModelError::DegenerateLinearization { .. })));
        let p = OvmParams { alpha: 0.5, beta: 0.6, ..defaults() };
        let c = linearize_hdv(&p, 15.0).unwrap();
        assert!((c.a2 - 1.1).abs() < 1e-15);
        assert_eq!(c.a3, 0.6);
    }

    #[test]
    fn coefficient_validation() {
        assert!(LinearHdvCoeffs::new(0.9, 1.5, 0.9).is_ok());
        assert!(LinearHdvCoeffs::new(0.0, 1.5, 0.9).is_err());
        assert!(LinearHdvCoeffs::new(0.9, 0.9, 0.9).is_err());
        assert!(LinearHdvCoeffs::new(0.9, 1.5, -0.1).is_err());
        assert!(OvmParams::new(0.6, 0.9, 30.0, 35.0, 5.0).is_err());
        assert!(OvmParams::new(-0.6, 0.9, 30.0, 5.0, 35.0).is_err());
    }

    #[test]
    fn two_vehicle_structure() {
        let road = RingRoad::homogeneous(2, 40.0, defaults()).unwrap();
        let m = road.linearize(15.0).unwrap();
        let c = m.coeffs[0];
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(4, 4, &[
            0.0, -1.0, 0.0, 1.0,
            0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, -1.0,
            0.0, c.a3, c.a1, -c.a2,
        ]);
        assert_eq!(m.a, expected);
        assert_eq!(m.b.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.h, DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(m.s_star, vec![20.0, 20.0]);
    }

    #[test]
    fn twenty_vehicle_ring() {
        let road = RingRoad::homogeneous(20, 400.0, defaults()).unwrap();
        let m = road.linearize(15.0).unwrap();
        assert!((m.s_star[0] - 20.0).abs() < 1e-9);
        assert_eq!(m.s_star.iter().sum::<f64>(), 400.0);
        assert_eq!(m.b.iter().filter(|x| **x != 0.0).count(), 1);
        // block-bidiagonal sparsity with wrap
        for r in 0..40 {
            for c in 0..40 {
                let (bi, bj) = (r / 2, c / 2);
                let allowed = bi == bj || bj + 1 == bi || (bi == 0 && bj == 19);
                if !allowed {
                    assert_eq!(m.a[(r, c)], 0.0);
                }
            }
        }
        let small = RingRoad::homogeneous(20, 100.0, defaults()).unwrap();
        assert!(matches!(small.linearize(15.0), Err(ModelError::InfeasibleEquilibrium { .. })));
    }

    #[test]
    fn explicit_cav_spacing_keeps_the_matrices() {
        let road = RingRoad::homogeneous(20, 400.0, defaults()).unwrap();
        let m = road.linearize(15.0).unwrap();
        let shifted = road.linearize_with_cav_spacing(15.0, 25.0).unwrap();
        assert_eq!(m.a, shifted.a);
        assert_eq!(shifted.s_star[0], 25.0);
        assert_eq!(shifted.circumference, 400.0);
        // beyond the reachable range the ring cannot close, but an explicit spacing still linearizes
        let fast = road.linearize_with_cav_spacing(17.0, 10.0).unwrap();
        assert!(fast.s_star[1..].iter().sum::<f64>() > 400.0);
        assert!(road.linearize_with_cav_spacing(15.0, 0.0).is_err());
    }

    #[test]
    fn heterogeneous_sampling_is_seeded() {
        let a = RingRoad::heterogeneous(20, 400.0, defaults(), Heterogeneity::default(), 3).unwrap();
        let b = RingRoad::heterogeneous(20, 400.0, defaults(), Heterogeneity::default(), 3).unwrap();
        let c = RingRoad::heterogeneous(20, 400.0, defaults(), Heterogeneity::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for p in &a.vehicles {
            assert!((p.alpha - 0.6).abs() <= 0.1 && (p.beta - 0.9).abs() <= 0.1 && (p.s_go - 35.0).abs() <= 5.0);
        }
    }

    fn params() -> impl Strategy<Value = OvmParams> {
        (0.2f64..1.5, 0.2f64..1.5, 10.0f64..40.0, 1.0f64..8.0, 10.0f64..40.0).prop_map(|(alpha, beta, v_max, s_st, gap)| {
            OvmParams { alpha, beta, v_max, s_st, s_go: s_st + gap }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn equilibrium_residual_vanishes(p in params(), frac in 0.0f64..=1.0) {
            let v = frac * p.v_max;
            let s = equilibrium_spacing(&p, v).unwrap();
            prop_assert!(ovm_acceleration(&p, s, 0.0, v).abs() < 1e-10 * (1.0 + p.alpha * p.v_max));
        }

        #[test]
        fn equilibrium_is_monotone(p in params(), f1 in 0.0f64..=1.0, f2 in 0.0f64..=1.0) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            prop_assert!(equilibrium_spacing(&p, lo * p.v_max).unwrap() <= equilibrium_spacing(&p, hi * p.v_max).unwrap());
        }

        #[test]
        fn linearization_matches_finite_differences(p in params(), frac in 0.05f64..0.95) {
            let v = frac * p.v_max;
            let c = linearize_hdv(&p, v).unwrap();
            let s = equilibrium_spacing(&p, v).unwrap();
            let h = 1e-6;
            let f = |s: f64, sd: f64, v: f64| ovm_acceleration(&p, s, sd, v);
            let ds = (f(s + h, 0.0, v) - f(s - h, 0.0, v)) / (2.0 * h);
            let dsd = (f(s, h, v) - f(s, -h, v)) / (2.0 * h);
            let dv = (f(s, 0.0, v + h) - f(s, 0.0, v - h)) / (2.0 * h);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            prop_assert!(rel(ds, c.a1) < 1e-6);
            prop_assert!(rel(dsd - dv, c.a2) < 1e-6);
            prop_assert!(rel(dsd, c.a3) < 1e-6);
        }
    }
}
