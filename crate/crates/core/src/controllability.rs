//! PBH analysis of the ring model.
//!
//! The CAV is given a fictitious car-following feedback so that its block
//! looks like an HDV block; the transformed matrix `A_hat` shares the
//! uncontrollable modes of `(A, B)` and has the conserved spacing sum
//! `rho_0 = (1, 0, 1, 0, ...)` as a left null vector.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::traffic::{velocity_index, LinearHdvCoeffs, RingModel};

pub const DEFAULT_RANK_TOL: f64 = 1e-8;
pub const EIGEN_CLUSTER_TOL: f64 = 1e-7;
const CONDITION_REL_TOL: f64 = 1e-12;
const EIGEN_CONDITION_TOL: f64 = 1e-10;

/// `A_hat = A + B K_hat` with `K_hat = [a11, -a12, 0, ..., 0, a13]`: the CAV
/// velocity row becomes `(a11, -a12, 0, ..., 0, a13)`.
pub fn transform_to_hat(m: &RingModel, cav: &LinearHdvCoeffs) -> DMatrix<f64> {
    let mut a = m.a.clone();
    a[(1, 0)] += cav.a1;
    a[(1, 1)] -= cav.a2;
    a[(1, velocity_index(m.n - 1))] += cav.a3;
    a
}

/// Default fictitious CAV coefficients: the mean over the HDVs.
pub fn default_cav_coeffs(m: &RingModel) -> LinearHdvCoeffs {
    LinearHdvCoeffs::mean(&m.coeffs).expect("a ring model has at least one HDV")
}

/// `rho_0 = (1, 0, 1, 0, ..., 1, 0)`.
pub fn rho0(n: usize) -> DVector<f64> {
    DVector::from_fn(2 * n, |k, _| if k % 2 == 0 { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for Complex {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl From<Complex> for Complex64 {
    fn from(z: Complex) -> Self {
        Complex64::new(z.re, z.im)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncontrollableMode {
    pub eigenvalue: Complex,
    /// Unit left vector with `rho' A = lambda rho'` and `rho' B = 0`.
    pub left_vector: Vec<Complex>,
    pub stable: bool,
}

impl UncontrollableMode {
    pub fn left(&self) -> DVector<Complex64> {
        DVector::from_iterator(self.left_vector.len(), self.left_vector.iter().map(|&z| z.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplicityRoute {
    /// Kernel dimensions of successive powers, by SVD.
    Numerical,
    /// SVD of the squared matrix was ambiguous; the sign of
    /// `sum (a3 - a2) / a1` decided the Jordan structure.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilizabilityVerdict {
    /// The closed-form sufficient condition holds.
    ConditionHolds,
    /// The sufficient condition fails; the PBH verdict is reported instead.
    ConditionFailedUndetermined,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PbhReport {
    pub eigenvalues: Vec<Complex>,
    pub uncontrollable_modes: Vec<UncontrollableMode>,
    pub is_controllable: bool,
    pub is_stabilizable: bool,
    pub zero_mode_multiplicity: usize,
    /// `dim ker A_hat^k` for `k = 1, 2, ...` until it stops growing.
    pub kernel_dims: Vec<usize>,
    pub multiplicity_route: MultiplicityRoute,
    /// Unit right null vector of `A_hat` (first one if several).
    pub kernel_vector: Vec<f64>,
    pub condition: StabilizabilityVerdict,
    pub tol: f64,
}

impl PbhReport {
    pub fn dim_ker(&self) -> usize {
        self.kernel_dims[0]
    }

    pub fn dim_ker_sq(&self) -> usize {
        *self.kernel_dims.get(1).unwrap_or(&self.kernel_dims[0])
    }
}

/// Eigenvalues of a real matrix through the real Schur form.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, AnalysisError> {
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 20_000).ok_or_else(|| AnalysisError::Numerical {
        reason: "Schur iteration did not converge".into(),
        condition: condition_estimate(a),
    })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Group eigenvalues closer than `tol` (single linkage); returns cluster means.
pub fn cluster_eigenvalues(eigs: &[Complex64], tol: f64) -> Vec<Complex64> {
    let mut label: Vec<usize> = (0..eigs.len()).collect();
    fn find(label: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while label[r] != r {
            r = label[r];
        }
        label[i] = r;
        r
    }
    for i in 0..eigs.len() {
        for j in (i + 1)..eigs.len() {
            if (eigs[i] - eigs[j]).norm() <= tol {
                let (ri, rj) = (find(&mut label, i), find(&mut label, j));
                label[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut sums: std::collections::BTreeMap<usize, (Complex64, usize)> = Default::default();
    for (i, e) in eigs.iter().enumerate() {
        let r = find(&mut label, i);
        let s = sums.entry(r).or_insert((Complex64::new(0.0, 0.0), 0));
        s.0 += e;
        s.1 += 1;
    }
    sums.values().map(|(s, k)| s / *k as f64).collect()
}

/// Rank-deficient directions of `[lambda I - A, B]` at every distinct
/// eigenvalue of `A`: `(lambda, unit left vector)` pairs.
pub fn pbh_modes(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Result<Vec<(Complex64, DVector<Complex64>)>, AnalysisError> {
    let n = a.nrows();
    let eigs = eigenvalues(a)?;
    let mut modes = Vec::new();
    for lambda in cluster_eigenvalues(&eigs, EIGEN_CLUSTER_TOL) {
        let mut pencil = DMatrix::<Complex64>::zeros(n, n + 1);
        for r in 0..n {
            for c in 0..n {
                pencil[(r, c)] = Complex64::new(-a[(r, c)], 0.0);
            }
            pencil[(r, r)] += lambda;
            pencil[(r, n)] = Complex64::new(b[r], 0.0);
        }
        let svd = pencil.svd(true, false);
        let u = svd.u.ok_or_else(|| AnalysisError::Numerical {
            reason: "SVD did not produce left singular vectors".into(),
            condition: condition_estimate(a),
        })?;
        let smax = svd.singular_values.max();
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= tol * smax {
                modes.push((lambda, u.column(k).map(|z| z.conj())));
            }
        }
    }
    Ok(modes)
}

/// Numerical rank with threshold `tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Rank of `[B, AB, ..., A^{N-1} B]`, columns normalized before the SVD.
pub fn kalman_rank(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> usize {
    let n = a.nrows();
    let mut cols = Vec::with_capacity(n);
    let mut v = b.clone();
    for _ in 0..n {
        let norm = v.norm();
        cols.push(if norm > 0.0 { &v / norm } else { v.clone() });
        v = a * v;
    }
    numerical_rank(&DMatrix::from_columns(&cols), tol)
}

/// `sum_i (a3 - a2) / a1` over the given coefficient sets.
pub fn jordan_indicator(all: &[LinearHdvCoeffs]) -> f64 {
    all.iter().map(|c| (c.a3 - c.a2) / c.a1).sum()
}

fn kernel_dims(a: &DMatrix<f64>, tol: f64, all: &[LinearHdvCoeffs]) -> (Vec<usize>, MultiplicityRoute) {
    let n = a.nrows();
    let mut dims = Vec::new();
    let mut route = MultiplicityRoute::Numerical;
    let mut power = a.clone();
    for k in 1..=n {
        let sv = power.clone().singular_values();
        let smax = sv.max();
        let thresh = tol * smax;
        let dim = sv.iter().filter(|&&s| s <= thresh).count();
        // singular values within two decades of the threshold make the count unreliable
        let ambiguous = sv.iter().any(|&s| s > 1e-2 * thresh && s < 1e2 * thresh);
        if k == 2 && ambiguous && dims[0] == 1 {
            route = MultiplicityRoute::Analytic;
            let d = if jordan_indicator(all) < 0.0 { 1 } else { 2 };
            dims.push(d);
        } else {
            dims.push(dim);
        }
        if k > 1 && dims[k - 1] == dims[k - 2] {
            dims.pop();
            break;
        }
        if route == MultiplicityRoute::Analytic {
            break;
        }
        power = &power * a;
    }
    (dims, route)
}

/// PBH analysis of `(A_hat, B)`; by construction its uncontrollable modes are
/// those of `(A, B)`.
pub fn pbh_analysis(m: &RingModel, cav: &LinearHdvCoeffs, tol: f64) -> Result<PbhReport, AnalysisError> {
    if !(tol > 0.0) {
        return Err(AnalysisError::Domain(format!("rank tolerance {tol} must be positive")));
    }
    cav.validate()?;
    let a_hat = transform_to_hat(m, cav);
    let eigs = eigenvalues(&a_hat)?;
    let raw_modes = pbh_modes(&a_hat, &m.b, tol)?;

    let mut all = vec![*cav];
    all.extend_from_slice(&m.coeffs);
    let (kernel_dims, multiplicity_route) = kernel_dims(&a_hat, tol, &all);
    let zero_mode_multiplicity = *kernel_dims.last().unwrap();
    let zero_semisimple = kernel_dims.len() == 1;

    let uncontrollable_modes: Vec<UncontrollableMode> = raw_modes
        .into_iter()
        .map(|(lambda, rho)| {
            let at_zero = lambda.norm() <= EIGEN_CLUSTER_TOL;
            let stable = lambda.re < -EIGEN_CLUSTER_TOL || (at_zero && zero_semisimple);
            UncontrollableMode { eigenvalue: lambda.into(), left_vector: rho.iter().map(|&z| z.into()).collect(), stable }
        })
        .collect();

    let kernel = a_hat.clone().svd(false, true);
    let v_t = kernel.v_t.ok_or_else(|| AnalysisError::Numerical {
        reason: "SVD did not produce right singular vectors".into(),
        condition: condition_estimate(&a_hat),
    })?;
    let imin = kernel.singular_values.imin();
    let mut kernel_vector: Vec<f64> = v_t.row(imin).iter().copied().collect();
    // sign convention: last entry (an HDV velocity) positive
    if kernel_vector.last().copied().unwrap_or(0.0) < 0.0 {
        kernel_vector.iter_mut().for_each(|x| *x = -*x);
    }

    let condition = if check_stabilizability_condition(&all) {
        StabilizabilityVerdict::ConditionHolds
    } else {
        StabilizabilityVerdict::ConditionFailedUndetermined
    };

    Ok(PbhReport {
        eigenvalues: eigs.into_iter().map(Into::into).collect(),
        is_controllable: uncontrollable_modes.is_empty(),
        is_stabilizable: uncontrollable_modes.iter().all(|m| m.stable),
        uncontrollable_modes,
        zero_mode_multiplicity,
        kernel_dims,
        multiplicity_route,
        kernel_vector,
        condition,
        tol,
    })
}

/// Sufficient stabilizability condition over all ordered pairs `(i, j)`:
/// `a_j1^2 - a_i2 a_j1 a_j3 + a_i1 a_j3^2 != 0`.
pub fn check_stabilizability_condition(all: &[LinearHdvCoeffs]) -> bool {
    all.iter().all(|ci| {
        all.iter().all(|cj| {
            let terms = [cj.a1 * cj.a1, -ci.a2 * cj.a1 * cj.a3, ci.a1 * cj.a3 * cj.a3];
            let value: f64 = terms.iter().sum();
            let scale: f64 = terms.iter().map(|t| t.abs()).sum();
            value.abs() > CONDITION_REL_TOL * scale
        })
    })
}

/// For a nonzero `lambda`: `lambda^2 + a2 lambda + a1 != 0` and
/// `a3 lambda + a2 != 0` for every coefficient set.
pub fn eigenvalue_condition_holds(all: &[LinearHdvCoeffs], lambda: Complex64) -> Result<bool, AnalysisError> {
    if lambda.norm() == 0.0 {
        return Err(AnalysisError::Domain("lambda = 0".into()));
    }
    Ok(all.iter().all(|c| {
        (lambda * lambda + lambda * c.a2 + c.a1).norm() > EIGEN_CONDITION_TOL
            && (lambda * c.a3 + c.a2).norm() > EIGEN_CONDITION_TOL
    }))
}

/// [`eigenvalue_condition_holds`] over the CAV slot and every HDV of `m`.
pub fn verify_eigenvalue_condition(m: &RingModel, cav: &LinearHdvCoeffs, lambda: Complex64) -> Result<bool, AnalysisError> {
    let mut all = vec![*cav];
    all.extend_from_slice(&m.coeffs);
    eigenvalue_condition_holds(&all, lambda)
}
