//! Infeasible-start primal-dual interior-point method.
//!
//! The program `min c'y  s.t.  E y = f,  F_b(y) = F0_b + sum_i y_i G_ib >= 0`
//! is paired with its dual
//!
//! ```text
//! max  -sum_b <F0_b, Z_b> + f' mu
//! s.t.  sum_b <G_ib, Z_b> + (E' mu)_i = c_i,   Z_b >= 0.
//! ```
//!
//! Search directions use the HKM scaling with a Mehrotra predictor-corrector.
//! Primal infeasibility is declared from a normalized Farkas ray of the dual
//! iterate and unboundedness from a normalized primal ray, both checked every
//! iteration; the iteration limit is never used to infer infeasibility.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::program::{symmetric_value, vector_value, ConicProgram, SymmetricVar, VarId, VectorVar};
use crate::SdpError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative primal and dual feasibility tolerance.
    pub feas_tol: f64,
    /// Relative duality gap tolerance.
    pub gap_tol: f64,
    pub max_iters: usize,
    /// Tolerance on normalized infeasibility / unboundedness certificates.
    pub infeas_tol: f64,
    /// A stalled run whose residuals are all within this multiple of their
    /// tolerances is reported as [`SolveStatus::NearOptimal`].
    pub near_optimal_factor: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Emit one `log::debug!` line per iteration.
    pub log_iterations: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iters: 120,
            infeas_tol: 1e-8,
            near_optimal_factor: 100.0,
            step_fraction: 0.95,
            log_iterations: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// No point satisfies the constraints (a dual Farkas ray was found).
    Infeasible,
    /// The objective is unbounded below on the feasible set.
    Unbounded,
    /// Progress stopped with every residual within `near_optimal_factor`
    /// times its tolerance.
    NearOptimal,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Full primal variable vector (best iterate when not optimal).
    pub y: DVector<f64>,
    /// Primal objective `c'y`.
    pub objective: f64,
    /// Dual objective of the final dual iterate.
    pub dual_objective: f64,
    /// Largest relative PSD violation `max(0, -lambda_min(F_b(y))) / (1 + |F0_b|)`.
    pub max_psd_violation: f64,
    /// Largest relative equality violation.
    pub max_equality_violation: f64,
    /// Relative dual residual.
    pub dual_residual: f64,
    /// Relative duality gap.
    pub gap: f64,
    pub iterations: usize,
    /// Dual matrices, one per PSD block.
    pub duals: Vec<DMatrix<f64>>,
    /// Multipliers of the equality constraints.
    pub equality_duals: DVector<f64>,
}

impl SolveOutcome {
    pub fn value(&self, v: VarId) -> f64 {
        self.y[v.index()]
    }

    pub fn symmetric(&self, x: &SymmetricVar) -> DMatrix<f64> {
        symmetric_value(x, &self.y)
    }

    pub fn vector(&self, x: &VectorVar) -> DVector<f64> {
        vector_value(x, &self.y)
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

struct Block {
    dim: usize,
    f0: DMatrix<f64>,
    vars: Vec<usize>,
    entries: Vec<Vec<(usize, usize, f64)>>,
}

impl Block {
    fn apply_linear(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (v, es) in self.vars.iter().zip(&self.entries) {
            let yv = y[*v];
            if yv != 0.0 {
                for &(r, c, w) in es {
                    m[(r, c)] += w * yv;
                }
            }
        }
        m
    }

    fn adjoint_into(&self, w: &DMatrix<f64>, out: &mut DVector<f64>) {
        for (v, es) in self.vars.iter().zip(&self.entries) {
            out[*v] += es.iter().map(|&(r, c, g)| g * w[(c, r)]).sum::<f64>();
        }
    }
}

/// Run the interior-point method on `program`.
///
/// Returns an error only for invalid settings or malformed programs; solver
/// verdicts (including numerical failure) are reported through
/// [`SolveOutcome::status`].
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Result<SolveOutcome, SdpError> {
    if !(settings.feas_tol > 0.0 && settings.gap_tol > 0.0 && settings.infeas_tol > 0.0) {
        return Err(SdpError::InvalidSettings("tolerances must be positive".into()));
    }
    if !(settings.near_optimal_factor >= 1.0) {
        return Err(SdpError::InvalidSettings("near-optimal factor must be at least 1".into()));
    }
    if !(settings.step_fraction > 0.0 && settings.step_fraction < 1.0) {
        return Err(SdpError::InvalidSettings("step fraction must lie in (0, 1)".into()));
    }
    if settings.max_iters == 0 {
        return Err(SdpError::InvalidSettings("max_iters must be positive".into()));
    }
    let m = program.num_vars();
    if m == 0 {
        return Err(SdpError::Malformed("program has no variables".into()));
    }
    for (b, e) in program.psd.iter().enumerate() {
        if (&e.constant - e.constant.transpose()).abs().max() > 1e-12 * (1.0 + e.constant.abs().max()) {
            return Err(SdpError::Malformed(format!("constant of PSD block {b} is not symmetric")));
        }
    }
    Ipm::new(program, settings).run()
}

struct Ipm<'a> {
    settings: &'a SolverSettings,
    blocks: Vec<Block>,
    c: DVector<f64>,
    e: DMatrix<f64>,
    f: DVector<f64>,
    m: usize,
    order: usize,
}

struct Iterate {
    y: DVector<f64>,
    s: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
    mu: DVector<f64>,
}

struct Direction {
    dy: DVector<f64>,
    dmu: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
}

struct Residuals {
    rp: Vec<DMatrix<f64>>,
    rd: DVector<f64>,
    re: DVector<f64>,
    pobj: f64,
    dobj: f64,
    complementarity: f64,
    pinf: f64,
    dinf: f64,
    relgap: f64,
}

impl<'a> Ipm<'a> {
    fn new(program: &ConicProgram, settings: &'a SolverSettings) -> Self {
        let m = program.num_vars();
        let blocks: Vec<Block> = program
            .psd
            .iter()
            .map(|e| Block {
                dim: e.dim(),
                f0: e.constant.clone(),
                vars: e.terms.keys().copied().collect(),
                entries: e.terms.values().cloned().collect(),
            })
            .collect();
        let (e, f) = program.equality_system();
        let order = blocks.iter().map(|b| b.dim).sum();
        Self {
            settings,
            blocks,
            c: program.objective_vector(),
            e,
            f,
            m,
            order,
        }
    }

    fn initial_point(&self) -> Iterate {
        let mut s = Vec::with_capacity(self.blocks.len());
        let mut z = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let d = b.dim as f64;
            let mut zeta = 10f64.max(d.sqrt());
            let mut xi = zeta.max(b.f0.norm());
            for (v, es) in b.vars.iter().zip(&b.entries) {
                let gnorm = es.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt();
                zeta = zeta.max(d * (1.0 + self.c[*v].abs()) / (1.0 + gnorm));
                xi = xi.max(gnorm);
            }
            s.push(DMatrix::identity(b.dim, b.dim) * xi);
            z.push(DMatrix::identity(b.dim, b.dim) * zeta);
        }
        Iterate {
            y: DVector::zeros(self.m),
            s,
            z,
            mu: DVector::zeros(self.e.nrows()),
        }
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let mut rp = Vec::with_capacity(self.blocks.len());
        let mut adj = DVector::zeros(self.m);
        let mut f0_dot_z = 0.0;
        let mut complementarity = 0.0;
        let mut f0_norm2 = 0.0;
        for (k, b) in self.blocks.iter().enumerate() {
            let fy = &b.f0 + b.apply_linear(&it.y);
            rp.push(fy - &it.s[k]);
            b.adjoint_into(&it.z[k], &mut adj);
            f0_dot_z += b.f0.dot(&it.z[k]);
            complementarity += it.s[k].dot(&it.z[k]);
            f0_norm2 += b.f0.norm_squared();
        }
        let rd = &self.c - adj - self.e.transpose() * &it.mu;
        let re = &self.f - &self.e * &it.y;
        let pobj = self.c.dot(&it.y);
        let dobj = -f0_dot_z + self.f.dot(&it.mu);
        let rp_norm = (rp.iter().map(|r| r.norm_squared()).sum::<f64>() + re.norm_squared()).sqrt();
        let pinf = rp_norm / (1.0 + f0_norm2.sqrt() + self.f.norm());
        let dinf = rd.norm() / (1.0 + self.c.norm());
        let relgap = (pobj - dobj).abs().max(complementarity) / (1.0 + pobj.abs() + dobj.abs());
        Residuals {
            rp,
            rd,
            re,
            pobj,
            dobj,
            complementarity,
            pinf,
            dinf,
            relgap,
        }
    }

    fn run(self) -> Result<SolveOutcome, SdpError> {
        let st = self.settings;
        let mut it = self.initial_point();
        let f0_norm = self.blocks.iter().map(|b| b.f0.norm_squared()).sum::<f64>().sqrt();
        let mut status = SolveStatus::NumericalFailure;
        let mut iterations = 0;
        let mut stalled = 0;

        for k in 0..=st.max_iters {
            iterations = k;
            let res = self.residuals(&it);
            if st.log_iterations {
                log::debug!(
                    "sdp iter {k:3}: pobj {:+.8e} dobj {:+.8e} pinf {:.2e} dinf {:.2e} gap {:.2e}",
                    res.pobj,
                    res.dobj,
                    res.pinf,
                    res.dinf,
                    res.relgap
                );
            }
            if res.pinf <= st.feas_tol && res.dinf <= st.feas_tol && res.relgap <= st.gap_tol {
                status = SolveStatus::Optimal;
                break;
            }
            if let Some(verdict) = self.certificate(&it, &res, f0_norm) {
                status = verdict;
                break;
            }
            if k == st.max_iters {
                break;
            }

            let inv_s: Vec<DMatrix<f64>> = match it.s.iter().map(spd_inverse).collect::<Option<Vec<_>>>() {
                Some(v) => v,
                None => break,
            };
            let schur = self.schur_matrix(&inv_s, &it.z);
            let Some(kkt) = Kkt::factor(schur, &self.e) else {
                break;
            };

            let mu = res.complementarity / self.order as f64;
            // predictor
            let pred = self.direction(&kkt, &it, &inv_s, &res, 0.0, None);
            let (ap, ad) = self.step_lengths(&it, &pred, 1.0);
            let mut mu_aff = 0.0;
            for k in 0..self.blocks.len() {
                let s = &it.s[k] + &pred.ds[k] * ap;
                let z = &it.z[k] + &pred.dz[k] * ad;
                mu_aff += s.dot(&z);
            }
            mu_aff /= self.order as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            // corrector
            let corr: Vec<DMatrix<f64>> = pred.ds.iter().zip(&pred.dz).map(|(ds, dz)| ds * dz).collect();
            let dir = self.direction(&kkt, &it, &inv_s, &res, sigma * mu, Some(&corr));
            let (ap, ad) = self.step_lengths(&it, &dir, st.step_fraction);
            if st.log_iterations {
                log::debug!("    step {ap:.2e}/{ad:.2e} sigma {sigma:.2e}");
            }

            it.y += &dir.dy * ap;
            for k in 0..self.blocks.len() {
                it.s[k] += &dir.ds[k] * ap;
                it.z[k] += &dir.dz[k] * ad;
                symmetrize(&mut it.s[k]);
                symmetrize(&mut it.z[k]);
            }
            it.mu += &dir.dmu * ad;

            if ap.max(ad) < 1e-10 {
                stalled += 1;
                if stalled >= 3 {
                    break;
                }
            } else {
                stalled = 0;
            }
        }
        if status == SolveStatus::NumericalFailure {
            let res = self.residuals(&it);
            let f = st.near_optimal_factor;
            if res.pinf <= f * st.feas_tol && res.dinf <= f * st.feas_tol && res.relgap <= f * st.gap_tol {
                status = SolveStatus::NearOptimal;
            }
        }
        Ok(self.outcome(it, status, iterations))
    }

    fn certificate(&self, it: &Iterate, res: &Residuals, f0_norm: f64) -> Option<SolveStatus> {
        let tol = self.settings.infeas_tol;
        // dual ray: G'(Z) + E'mu = 0 with -<F0, Z> + f'mu > 0
        if res.dobj > 0.0 {
            let ray_res = (&self.c - &res.rd).norm();
            if ray_res / res.dobj <= tol {
                return Some(SolveStatus::Infeasible);
            }
        }
        // primal ray: G(y) >= 0, E y = 0 with c'y < 0
        if res.pobj < 0.0 {
            let rp_norm = res.rp.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt();
            let ey = (&self.e * &it.y).norm();
            if (rp_norm + f0_norm + ey) / -res.pobj <= tol {
                return Some(SolveStatus::Unbounded);
            }
        }
        None
    }

    /// `M_ij = sum_b tr(G_ib S_b^{-1} G_jb Z_b)`
    fn schur_matrix(&self, inv_s: &[DMatrix<f64>], z: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.m, self.m);
        for (k, b) in self.blocks.iter().enumerate() {
            let d = b.dim;
            let sinv = inv_s[k].as_slice();
            let zk = z[k].as_slice();
            let mut t = vec![0.0; d * d];
            for (j, ej) in b.entries.iter().enumerate() {
                t.iter_mut().for_each(|x| *x = 0.0);
                // t = S^{-1} G_j Z, column-major
                for &(r, s, w) in ej {
                    let scol = &sinv[r * d..(r + 1) * d];
                    let zcol = &zk[s * d..(s + 1) * d];
                    for p in 0..d {
                        let coef = w * zcol[p];
                        if coef != 0.0 {
                            let tcol = &mut t[p * d..(p + 1) * d];
                            for (tq, sq) in tcol.iter_mut().zip(scol) {
                                *tq += coef * sq;
                            }
                        }
                    }
                }
                let vj = b.vars[j];
                for (i, ei) in b.entries.iter().enumerate().take(j + 1) {
                    let val: f64 = ei.iter().map(|&(p, q, w)| w * t[p * d + q]).sum();
                    let vi = b.vars[i];
                    m[(vi, vj)] += val;
                    if vi != vj {
                        m[(vj, vi)] += val;
                    }
                }
            }
        }
        m
    }

    fn direction(
        &self,
        kkt: &Kkt,
        it: &Iterate,
        inv_s: &[DMatrix<f64>],
        res: &Residuals,
        tau: f64,
        corr: Option<&[DMatrix<f64>]>,
    ) -> Direction {
        // h_i = <G_i, tau S^{-1} - Z - S^{-1} Rp Z - S^{-1} corr> - rd_i
        let mut h = -res.rd.clone();
        for (k, b) in self.blocks.iter().enumerate() {
            let mut w = &inv_s[k] * tau - &it.z[k] - &inv_s[k] * &res.rp[k] * &it.z[k];
            if let Some(c) = corr {
                w -= &inv_s[k] * &c[k];
            }
            b.adjoint_into(&w, &mut h);
        }
        let (dy, dmu) = kkt.solve(&h, &res.re);
        let mut ds = Vec::with_capacity(self.blocks.len());
        let mut dz = Vec::with_capacity(self.blocks.len());
        for (k, b) in self.blocks.iter().enumerate() {
            let dsk = b.apply_linear(&dy) + &res.rp[k];
            let mut dzk = &inv_s[k] * tau - &it.z[k] - &inv_s[k] * &dsk * &it.z[k];
            if let Some(c) = corr {
                dzk -= &inv_s[k] * &c[k];
            }
            symmetrize(&mut dzk);
            ds.push(dsk);
            dz.push(dzk);
        }
        Direction { dy, dmu, ds, dz }
    }

    fn step_lengths(&self, it: &Iterate, dir: &Direction, fraction: f64) -> (f64, f64) {
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for k in 0..self.blocks.len() {
            ap = ap.min(max_step(&it.s[k], &dir.ds[k]));
            ad = ad.min(max_step(&it.z[k], &dir.dz[k]));
        }
        ((fraction * ap).min(1.0), (fraction * ad).min(1.0))
    }

    fn outcome(&self, it: Iterate, status: SolveStatus, iterations: usize) -> SolveOutcome {
        let res = self.residuals(&it);
        let mut max_psd_violation: f64 = 0.0;
        for b in &self.blocks {
            let fy = &b.f0 + b.apply_linear(&it.y);
            let lmin = SymmetricEigen::new(fy).eigenvalues.min();
            max_psd_violation = max_psd_violation.max((-lmin).max(0.0) / (1.0 + b.f0.norm()));
        }
        let max_equality_violation = if res.re.is_empty() {
            0.0
        } else {
            res.re.amax() / (1.0 + self.f.amax())
        };
        SolveOutcome {
            status,
            objective: res.pobj,
            dual_objective: res.dobj,
            max_psd_violation,
            max_equality_violation,
            dual_residual: res.dinf,
            gap: res.relgap,
            iterations,
            y: it.y,
            duals: it.z,
            equality_duals: it.mu,
        }
    }
}

/// Factored Newton system `[M, -E'; E, 0]`.
///
/// Without equalities `M` is factored by Cholesky. With equalities the
/// augmented matrix `[M, E'; E, 0]` is factored by LU with partial pivoting,
/// which avoids forming `E M^-1 E'` and squaring the conditioning of `M`.
struct Kkt {
    m: DMatrix<f64>,
    e: DMatrix<f64>,
    factor: KktFactor,
}

enum KktFactor {
    Cholesky(Cholesky<f64, Dyn>),
    Augmented(nalgebra::LU<f64, Dyn, Dyn>),
}

impl Kkt {
    fn factor(mut m: DMatrix<f64>, e: &DMatrix<f64>) -> Option<Self> {
        symmetrize(&mut m);
        let factor = if e.nrows() == 0 {
            KktFactor::Cholesky(regularized_cholesky(m.clone())?)
        } else {
            let (n, p) = (m.nrows(), e.nrows());
            let mut aug = DMatrix::zeros(n + p, n + p);
            aug.view_mut((0, 0), (n, n)).copy_from(&m);
            aug.view_mut((0, n), (n, p)).copy_from(&e.transpose());
            aug.view_mut((n, 0), (p, n)).copy_from(e);
            let lu = aug.lu();
            if !lu.is_invertible() {
                return None;
            }
            KktFactor::Augmented(lu)
        };
        Some(Self { m, e: e.clone(), factor })
    }

    /// Solve with a few rounds of iterative refinement; the Schur matrix is
    /// badly conditioned near the optimum.
    fn solve(&self, h: &DVector<f64>, re: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (mut dy, mut dmu) = self.solve_factored(h, re).expect("factor checked invertible");
        let scale = h.amax().max(re.amax()).max(f64::MIN_POSITIVE);
        for _ in 0..REFINEMENT_STEPS {
            let r1 = h - (&self.m * &dy - self.e.tr_mul(&dmu));
            let r2 = re - &self.e * &dy;
            if r1.amax().max(r2.amax()) <= 1e-15 * scale {
                break;
            }
            let Some((cy, cmu)) = self.solve_factored(&r1, &r2) else { break };
            dy += cy;
            dmu += cmu;
        }
        (dy, dmu)
    }

    fn solve_factored(&self, h: &DVector<f64>, re: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        match &self.factor {
            KktFactor::Cholesky(c) => Some((c.solve(h), DVector::zeros(0))),
            KktFactor::Augmented(lu) => {
                let n = h.len();
                let rhs = DVector::from_iterator(n + re.len(), h.iter().chain(re.iter()).copied());
                let sol = lu.solve(&rhs)?;
                // second block of the unknown is -dmu
                Some((sol.rows(0, n).into_owned(), -sol.rows(n, re.len())))
            }
        }
    }
}

const REFINEMENT_STEPS: usize = 3;

fn regularized_cholesky(mut m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    symmetrize(&mut m);
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut delta = 0.0;
    for _ in 0..8 {
        let trial = if delta > 0.0 {
            &m + DMatrix::identity(m.nrows(), m.ncols()) * delta
        } else {
            m.clone()
        };
        if let Some(c) = Cholesky::new(trial) {
            return Some(c);
        }
        delta = if delta == 0.0 { 1e-14 * scale } else { delta * 100.0 };
    }
    None
}

fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut inv = Cholesky::new(m.clone())?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Largest `alpha` with `x + alpha * dx` positive semidefinite (`x` positive definite).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(a) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(b) = l.solve_lower_triangular(&a.transpose()) else {
        return 0.0;
    };
    let mut b = b;
    symmetrize(&mut b);
    let lmin = SymmetricEigen::new(b).eigenvalues.min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for c in 0..n {
        for r in 0..c {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}
