//! Structured H2 state-feedback synthesis.
//!
//! With `X = P^-1`-style variables and `Z = K X`, the H2 problem becomes
//!
//! ```text
//! minimize    Tr(Q X) + R Y
//! subject to  A X + X A' - B Z - Z' B' + H H' <= 0
//!             [[Y, Z], [Z', X]] >= 0,   X > 0
//!             Z in Sparse(T),  X in Sparse(S*)
//! ```
//!
//! The spacing sum `rho_0' x` is conserved by every feedback, so the
//! Lyapunov LMI is singular along `rho_0`. It is imposed as `L rho_0 = 0`
//! plus strict negativity of `L` with the first row and column removed,
//! which is equivalent to `L <= 0`. Masked entries of `X` and `Z` are not
//! decision variables at all.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ringflow_sdp::{lyapunov_solve, solve, ConicProgram, LinExpr, MatExpr, SolveStatus, SolverSettings};
use serde::{Deserialize, Serialize};

use crate::controllability::{eigenvalues, rho0};
use crate::error::SynthesisError;
use crate::sparsity::SparsityPattern;
use crate::traffic::RingModel;

/// Square-root weights of the performance output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceWeights {
    pub gamma_s: f64,
    pub gamma_v: f64,
    pub gamma_u: f64,
    /// Optional `(gamma_s, gamma_v)` per vehicle, CAV first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_vehicle: Option<Vec<(f64, f64)>>,
}

impl Default for PerformanceWeights {
    fn default() -> Self {
        Self { gamma_s: 0.03, gamma_v: 0.15, gamma_u: 1.0, per_vehicle: None }
    }
}

impl PerformanceWeights {
    pub fn validate(&self, n: usize) -> Result<(), SynthesisError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SynthesisError::InvalidWeights(format!("{name} = {v} must be positive")))
            }
        };
        positive("gamma_s", self.gamma_s)?;
        positive("gamma_v", self.gamma_v)?;
        positive("gamma_u", self.gamma_u)?;
        if let Some(pv) = &self.per_vehicle {
            if pv.len() != n {
                return Err(SynthesisError::InvalidWeights(format!("{} per-vehicle weights for {n} vehicles", pv.len())));
            }
            for &(s, v) in pv {
                positive("per-vehicle gamma_s", s)?;
                positive("per-vehicle gamma_v", v)?;
            }
        }
        Ok(())
    }
}

/// `Q = diag(gamma_s^2, gamma_v^2, ...)` of order `2n`, `R = gamma_u^2`.
pub fn build_performance(w: &PerformanceWeights, n: usize) -> Result<(DMatrix<f64>, f64), SynthesisError> {
    w.validate(n)?;
    let diag = DVector::from_fn(2 * n, |k, _| {
        let (gs, gv) = w.per_vehicle.as_ref().map_or((w.gamma_s, w.gamma_v), |pv| pv[k / 2]);
        if k % 2 == 0 {
            gs * gs
        } else {
            gv * gv
        }
    });
    Ok((DMatrix::from_diagonal(&diag), w.gamma_u * w.gamma_u))
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// `X >= eps_pd I`.
    pub eps_pd: f64,
    /// Strict margin of the Lyapunov LMI off the conserved direction.
    pub eps_lmi: f64,
    pub solver: SolverSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { eps_pd: 1e-6, eps_lmi: 1e-6, solver: SolverSettings::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: String,
    pub iterations: usize,
    pub relative_gap_target: f64,
    pub feasibility_target: f64,
    pub gap: f64,
    pub max_psd_violation: f64,
    pub max_equality_violation: f64,
    pub variables: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub k: Vec<f64>,
    pub x: DMatrix<f64>,
    pub y: f64,
    pub z: Vec<f64>,
    /// `Tr(Q X) + R Y`, an upper bound on the squared closed-loop H2 norm.
    pub certified_cost: f64,
    pub structured: bool,
    pub pattern: SparsityPattern,
    pub x_min_eigenvalue: f64,
    /// Largest eigenvalue of `A X + X A' - B Z - Z' B' + H H'`.
    pub lmi_max_eigenvalue: f64,
    pub eps_pd: f64,
    pub eps_lmi: f64,
    pub solver: SolverReport,
}

impl SynthesisResult {
    pub fn gain(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.k)
    }

    /// `A - B K`.
    pub fn closed_loop(&self, m: &RingModel) -> DMatrix<f64> {
        closed_loop(m, &self.gain())
    }

    pub fn nonzero_blocks(&self) -> usize {
        self.k.chunks(2).filter(|b| b.iter().any(|&v| v != 0.0)).count()
    }
}

pub fn closed_loop(m: &RingModel, k: &DVector<f64>) -> DMatrix<f64> {
    &m.a - &m.b * k.transpose()
}

/// Accumulates symmetric coefficient entries `(r <= c) -> value`.
#[derive(Default)]
struct SymAccumulator(BTreeMap<(usize, usize), f64>);

impl SymAccumulator {
    fn add(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            *self.0.entry((r.min(c), r.max(c))).or_insert(0.0) += v;
        }
    }
}

/// Solve the structured H2 relaxation and recover `K = Z X^-1`.
pub fn solve_structured_h2(
    m: &RingModel,
    w: &PerformanceWeights,
    pat: &SparsityPattern,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let n = m.n;
    let dim = 2 * n;
    if pat.n != n {
        return Err(SynthesisError::Topology(format!("pattern for {} vehicles, model has {n}", pat.n)));
    }
    if !(opts.eps_pd > 0.0 && opts.eps_lmi > 0.0) {
        return Err(SynthesisError::InvalidWeights("strictness margins must be positive".into()));
    }
    let (q, r) = build_performance(w, n)?;
    let a = &m.a;
    let hht = &m.h * m.h.transpose();
    let spacing: Vec<usize> = (0..dim).step_by(2).collect();

    let mut p = ConicProgram::new();
    let x = p.add_symmetric_sparse(dim, |i, j| pat.s_star[i][j]);
    let z = p.add_vector_sparse(dim, |k| pat.t[k]);
    let y = p.add_scalar();

    // objective
    for k in 0..dim {
        p.add_sym_entry_objective(&x, k, q[(k, k)]);
    }
    p.add_objective(y, r);

    // Lyapunov block with the first state removed: -L - eps I >= 0
    let red = dim - 1;
    let mut lyap = MatExpr::zeros(red);
    for c in 0..dim {
        for rr in 0..=c {
            let Some((var, mult)) = x.entry(rr, c) else { continue };
            let mut acc = SymAccumulator::default();
            // A E + E A' with E the symmetric unit at (rr, c)
            let pairs: &[(usize, usize)] = if rr == c { &[(rr, c)] } else { &[(rr, c), (c, rr)] };
            for &(i, j) in pairs {
                for row in 0..dim {
                    let aij = a[(row, i)];
                    if aij != 0.0 {
                        // (A e_i e_j')[row, j] and its transpose
                        acc.add(row, j, if row == j { 2.0 * aij } else { aij });
                    }
                }
            }
            for ((i, j), v) in acc.0 {
                if i > 0 && j > 0 {
                    lyap.add(i - 1, j - 1, var, -v * mult);
                }
            }
        }
    }
    for k in 1..dim {
        if let Some(var) = z.entry(k) {
            // B Z + Z' B' with B = e_1
            let coef = if k == 1 { 2.0 } else { 1.0 };
            lyap.add(0, k - 1, var, coef);
        }
    }
    let mut constant = -hht.view((1, 1), (red, red)).into_owned();
    for d in 0..red {
        constant[(d, d)] -= opts.eps_lmi;
    }
    lyap.add_constant(&constant);
    p.add_psd(lyap);

    // L rho_0 = 0 on the remaining rows: (A X rho_0)_k - B_k (Z rho_0) = 0
    for row in 1..dim {
        let mut e = LinExpr::new();
        for l in 0..dim {
            let akl = a[(row, l)];
            if akl != 0.0 {
                for &s in &spacing {
                    e.add_sym_entry(&x, l, s, akl);
                }
            }
        }
        if row == 1 {
            for &s in &spacing {
                if let Some(var) = z.entry(s) {
                    e.add(var, -1.0);
                }
            }
        }
        if !e.is_empty() {
            p.add_equality(e, 0.0);
        }
    }

    // [[Y, Z], [Z', X]] >= 0
    let mut schur = MatExpr::zeros(dim + 1);
    schur.add(0, 0, y, 1.0);
    for k in 0..dim {
        if let Some(var) = z.entry(k) {
            schur.add(0, k + 1, var, 1.0);
        }
    }
    for c in 0..dim {
        for rr in 0..=c {
            schur.add_sym_entry(rr + 1, c + 1, &x, rr, c, 1.0);
        }
    }
    p.add_psd(schur);

    // X - eps_pd I >= 0
    let mut pd = MatExpr::zeros(dim);
    for c in 0..dim {
        for rr in 0..=c {
            pd.add_sym_entry(rr, c, &x, rr, c, 1.0);
        }
    }
    pd.add_constant(&(-DMatrix::identity(dim, dim) * opts.eps_pd));
    p.add_psd(pd);

    let out = solve(&p, &opts.solver)?;
    let numerical = |status: SolveStatus| SynthesisError::Numerical {
        status: format!("{status:?}"),
        iterations: out.iterations,
        primal: out.max_psd_violation.max(out.max_equality_violation),
        dual: out.dual_residual,
        gap: out.gap,
    };
    match out.status {
        SolveStatus::Optimal | SolveStatus::NearOptimal => {}
        SolveStatus::Infeasible => return Err(SynthesisError::StructuredInfeasible),
        other => return Err(numerical(other)),
    }

    let xv = out.symmetric(&x);
    let zv = out.vector(&z);
    let yv = out.value(y);
    let k = recover_gain(&xv, &zv, pat)?;

    let lmi = a * &xv + &xv * a.transpose() - &m.b * zv.transpose() - &zv * m.b.transpose() + &hht;
    let lmi_max_eigenvalue = lmi.symmetric_eigen().eigenvalues.max();
    let x_min_eigenvalue = xv.clone().symmetric_eigen().eigenvalues.min();
    let certified_cost = (&q * &xv).trace() + r * yv;
    // a stalled solve is only accepted if its certificate checks out
    if out.status == SolveStatus::NearOptimal && !(lmi_max_eigenvalue <= opts.eps_lmi && x_min_eigenvalue > 0.0) {
        return Err(numerical(out.status));
    }

    log::debug!(
        "structured H2: {} variables, {} iterations, cost {certified_cost:.6e}",
        p.num_vars(),
        out.iterations
    );

    Ok(SynthesisResult {
        k: k.iter().copied().collect(),
        x: xv,
        y: yv,
        z: zv.iter().copied().collect(),
        certified_cost,
        structured: !pat.is_full(),
        pattern: pat.clone(),
        x_min_eigenvalue,
        lmi_max_eigenvalue,
        eps_pd: opts.eps_pd,
        eps_lmi: opts.eps_lmi,
        solver: SolverReport {
            status: format!("{:?}", out.status),
            iterations: out.iterations,
            relative_gap_target: opts.solver.gap_tol,
            feasibility_target: opts.solver.feas_tol,
            gap: out.gap,
            max_psd_violation: out.max_psd_violation,
            max_equality_violation: out.max_equality_violation,
            variables: p.num_vars(),
        },
    })
}

/// `K = Z X^-1` computed on the visible block only. `X` is block diagonal
/// between visible and hidden states and `Z` vanishes on hidden states, so
/// the hidden part of `K` is exactly zero.
fn recover_gain(x: &DMatrix<f64>, z: &DVector<f64>, pat: &SparsityPattern) -> Result<DVector<f64>, SynthesisError> {
    let vis = pat.visible_states();
    let hid = pat.hidden_states();
    if vis.iter().any(|&i| hid.iter().any(|&j| x[(i, j)] != 0.0)) {
        return Err(SynthesisError::Topology("X couples visible and hidden states".into()));
    }
    let xv = DMatrix::from_fn(vis.len(), vis.len(), |r, c| x[(vis[r], vis[c])]);
    let zv = DVector::from_fn(vis.len(), |r, _| z[vis[r]]);
    let kv = xv
        .cholesky()
        .ok_or_else(|| SynthesisError::Numerical {
            status: "X not positive definite".into(),
            iterations: 0,
            primal: f64::NAN,
            dual: f64::NAN,
            gap: f64::NAN,
        })?
        .solve(&zv);
    let mut k = DVector::zeros(x.nrows());
    for (r, &i) in vis.iter().enumerate() {
        k[i] = kv[r];
    }
    Ok(k)
}

/// Orthonormal basis of the complement of a nonzero vector (Householder).
pub fn orthonormal_complement(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let u = v / v.norm();
    let mut w = u.clone();
    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += sign;
    let wn2 = w.norm_squared();
    let house = DMatrix::identity(n, n) - &w * w.transpose() * (2.0 / wn2);
    // column 0 is parallel to v; the rest span its complement
    house.columns(1, n - 1).into_owned()
}

const AXIS_TOL: f64 = 1e-8;

/// Closed-loop H2 norm `||G||` for `x' = A x + H w`, `z = C x`.
///
/// A single eigenvalue at zero is allowed when its left null vector `rho`
/// satisfies `rho' H = 0`: the mode is never excited and is deflated before
/// solving the Lyapunov equation.
pub fn h2_norm(a_cl: &DMatrix<f64>, h: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64, SynthesisError> {
    let n = a_cl.nrows();
    let scale = a_cl.norm().max(1.0);
    let eigs = eigenvalues(a_cl).map_err(|e| SynthesisError::UnboundedNorm(e.to_string()))?;
    if let Some(e) = eigs.iter().find(|e| e.re > AXIS_TOL * scale) {
        return Err(SynthesisError::UnboundedNorm(format!("unstable eigenvalue {e}")));
    }
    let axis: Vec<_> = eigs.iter().filter(|e| e.re.abs() <= AXIS_TOL * scale).collect();
    let (a_r, h_r, c_r) = match axis.len() {
        0 => (a_cl.clone(), h.clone(), c.clone()),
        1 if axis[0].norm() <= AXIS_TOL * scale => {
            let svd = a_cl.clone().svd(true, false);
            let u = svd.u.expect("requested U");
            let rho = u.column(svd.singular_values.imin()).into_owned();
            let leak = (rho.transpose() * h).norm();
            if leak > AXIS_TOL * h.norm().max(1.0) {
                return Err(SynthesisError::UnboundedNorm(format!("disturbance excites the zero mode (|rho' H| = {leak:.3e})")));
            }
            let v = orthonormal_complement(&rho);
            (v.transpose() * a_cl * &v, v.transpose() * h, c * &v)
        }
        _ => {
            return Err(SynthesisError::UnboundedNorm(format!(
                "{} eigenvalues on the imaginary axis",
                axis.len()
            )))
        }
    };
    debug_assert!(a_r.nrows() <= n);
    let p = lyapunov_solve(&a_r, &(&h_r * h_r.transpose())).map_err(|e| SynthesisError::UnboundedNorm(e.to_string()))?;
    Ok((&c_r * p * c_r.transpose()).trace().max(0.0).sqrt())
}

/// Performance output matrix `C = [Q^1/2; -R^1/2 K]`.
pub fn performance_output(q: &DMatrix<f64>, r: f64, k: &DVector<f64>) -> DMatrix<f64> {
    let dim = q.nrows();
    let mut c = DMatrix::zeros(dim + 1, dim);
    for i in 0..dim {
        c[(i, i)] = q[(i, i)].sqrt();
    }
    for j in 0..dim {
        c[(dim, j)] = -r.sqrt() * k[j];
    }
    c
}

/// H2 norm of `A - B K` with the weighted performance output.
pub fn closed_loop_h2(m: &RingModel, w: &PerformanceWeights, k: &DVector<f64>) -> Result<f64, SynthesisError> {
    let (q, r) = build_performance(w, m.n)?;
    h2_norm(&closed_loop(m, k), &m.h, &performance_output(&q, r, k))
}

/// Unstructured optimal H2 cost (squared norm) by Newton-Kleinman iteration
/// on the Riccati equation of the system restricted to the complement of
/// the conserved direction. `k0` must stabilize that restriction.
pub fn unstructured_optimum(
    m: &RingModel,
    w: &PerformanceWeights,
    k0: &DVector<f64>,
) -> Result<(f64, DVector<f64>), SynthesisError> {
    let (q, r) = build_performance(w, m.n)?;
    let v = orthonormal_complement(&rho0(m.n));
    let a = v.transpose() * &m.a * &v;
    let b = v.transpose() * &m.b;
    let h = v.transpose() * &m.h;
    let qr = v.transpose() * &q * &v;
    let mut k = v.transpose() * k0;
    let mut prev: Option<DMatrix<f64>> = None;
    for _ in 0..100 {
        let acl = &a - &b * k.transpose();
        let w = &qr + &k * k.transpose() * r;
        let p = lyapunov_solve(&acl.transpose(), &w).map_err(|e| SynthesisError::UnboundedNorm(e.to_string()))?;
        k = &p * &b / r;
        let done = prev.as_ref().is_some_and(|pp| (&p - pp).norm() <= 1e-13 * p.norm());
        prev = Some(p);
        if done {
            break;
        }
    }
    let p = prev.expect("at least one iteration");
    let cost = (h.transpose() * p * &h).trace();
    Ok((cost, &v * k))
}

trait ObjectiveExt {
    fn add_sym_entry_objective(&mut self, x: &ringflow_sdp::SymmetricVar, k: usize, coef: f64);
}

impl ObjectiveExt for ConicProgram {
    fn add_sym_entry_objective(&mut self, x: &ringflow_sdp::SymmetricVar, k: usize, coef: f64) {
        if let Some((var, mult)) = x.entry(k, k) {
            self.add_objective(var, coef * mult);
        }
    }
}
