use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::svec::svec_scale;

/// Index of a scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A symmetric matrix variable, optionally with structurally zero entries.
///
/// Off-diagonal entries are backed by `sqrt(2)`-scaled scalars (see
/// [`crate::svec`]). Use [`SymmetricVar::entry`] to get the scalar and the
/// multiplier that turns it back into the matrix entry.
#[derive(Debug, Clone)]
pub struct SymmetricVar {
    dim: usize,
    // upper-triangle (r <= c) position -> variable
    slots: Vec<Option<VarId>>,
}

impl SymmetricVar {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `X[i][j] = multiplier * value(var)`; `None` for a structural zero.
    pub fn entry(&self, i: usize, j: usize) -> Option<(VarId, f64)> {
        self.slots[crate::svec::svec_index(i, j)].map(|v| (v, 1.0 / svec_scale(i, j)))
    }

    /// Number of free (non structurally zero) entries in the upper triangle.
    pub fn free_entries(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

/// A contiguous vector of scalar variables.
#[derive(Debug, Clone)]
pub struct VectorVar {
    len: usize,
    // structural zeros are not allocated
    slots: Vec<Option<VarId>>,
}

impl VectorVar {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entry(&self, i: usize) -> Option<VarId> {
        self.slots[i]
    }
}

/// Affine symmetric-matrix expression `F0 + sum_k y_k F_k`.
#[derive(Debug, Clone)]
pub struct MatExpr {
    dim: usize,
    pub(crate) constant: DMatrix<f64>,
    // variable -> entries (r, c, value), both triangles listed
    pub(crate) terms: BTreeMap<usize, Vec<(usize, usize, f64)>>,
}

impl MatExpr {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            constant: DMatrix::zeros(dim, dim),
            terms: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Add `coef * var` at `(r, c)` and, for off-diagonal positions, `(c, r)`.
    pub fn add(&mut self, r: usize, c: usize, var: VarId, coef: f64) {
        assert!(r < self.dim && c < self.dim, "entry ({r}, {c}) outside order {}", self.dim);
        if coef == 0.0 {
            return;
        }
        let entries = self.terms.entry(var.0).or_default();
        push_entry(entries, r, c, coef);
        if r != c {
            push_entry(entries, c, r, coef);
        }
    }

    /// Add `coef * X[i][j]` for a symmetric variable entry at `(r, c)`.
    /// Structural zeros are skipped.
    pub fn add_sym_entry(&mut self, r: usize, c: usize, x: &SymmetricVar, i: usize, j: usize, coef: f64) {
        if let Some((v, mult)) = x.entry(i, j) {
            self.add(r, c, v, coef * mult);
        }
    }

    /// Add a constant symmetric matrix.
    pub fn add_constant(&mut self, m: &DMatrix<f64>) {
        assert_eq!(m.shape(), (self.dim, self.dim));
        self.constant += m;
    }

    /// Add `coef` to the constant at `(r, c)` and `(c, r)`.
    pub fn add_constant_entry(&mut self, r: usize, c: usize, coef: f64) {
        self.constant[(r, c)] += coef;
        if r != c {
            self.constant[(c, r)] += coef;
        }
    }

    /// Evaluate at a full variable vector.
    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (&v, entries) in &self.terms {
            let yv = y[v];
            if yv != 0.0 {
                for &(r, c, w) in entries {
                    m[(r, c)] += w * yv;
                }
            }
        }
        m
    }
}

fn push_entry(entries: &mut Vec<(usize, usize, f64)>, r: usize, c: usize, coef: f64) {
    if let Some(e) = entries.iter_mut().find(|e| e.0 == r && e.1 == c) {
        e.2 += coef;
    } else {
        entries.push((r, c, coef));
    }
}

/// Sparse scalar linear expression.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub(crate) terms: Vec<(usize, f64)>,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, var: VarId, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((var.0, coef));
        }
        self
    }

    pub fn add_sym_entry(&mut self, x: &SymmetricVar, i: usize, j: usize, coef: f64) -> &mut Self {
        if let Some((v, mult)) = x.entry(i, j) {
            self.add(v, coef * mult);
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Linear objective, linear equalities and PSD constraints over scalar and
/// symmetric-matrix variables. The problem is
///
/// ```text
/// minimize    c' y
/// subject to  E y = f
///             F_b(y) >= 0   for every PSD block b
/// ```
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    n_vars: usize,
    pub(crate) objective: Vec<(usize, f64)>,
    pub(crate) equalities: Vec<(LinExpr, f64)>,
    pub(crate) psd: Vec<MatExpr>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.n_vars
    }

    pub fn num_equalities(&self) -> usize {
        self.equalities.len()
    }

    pub fn psd_blocks(&self) -> &[MatExpr] {
        &self.psd
    }

    fn fresh(&mut self) -> VarId {
        let v = VarId(self.n_vars);
        self.n_vars += 1;
        v
    }

    pub fn add_scalar(&mut self) -> VarId {
        self.fresh()
    }

    pub fn add_vector(&mut self, len: usize) -> VectorVar {
        self.add_vector_sparse(len, |_| true)
    }

    /// Vector variable whose entries with `keep(i) == false` are fixed to zero.
    pub fn add_vector_sparse(&mut self, len: usize, keep: impl Fn(usize) -> bool) -> VectorVar {
        let slots = (0..len).map(|i| keep(i).then(|| self.fresh())).collect();
        VectorVar { len, slots }
    }

    pub fn add_symmetric(&mut self, dim: usize) -> SymmetricVar {
        self.add_symmetric_sparse(dim, |_, _| true)
    }

    /// Symmetric variable whose entries with `keep(i, j) == false` are fixed
    /// to zero. `keep` is only queried for `i <= j`.
    pub fn add_symmetric_sparse(&mut self, dim: usize, keep: impl Fn(usize, usize) -> bool) -> SymmetricVar {
        let mut slots = vec![None; crate::svec::svec_len(dim)];
        for c in 0..dim {
            for r in 0..=c {
                if keep(r, c) {
                    slots[crate::svec::svec_index(r, c)] = Some(self.fresh());
                }
            }
        }
        SymmetricVar { dim, slots }
    }

    pub fn add_objective(&mut self, var: VarId, coef: f64) {
        if coef != 0.0 {
            self.objective.push((var.0, coef));
        }
    }

    pub fn add_objective_expr(&mut self, e: &LinExpr) {
        self.objective.extend_from_slice(&e.terms);
    }

    /// `e == rhs`
    pub fn add_equality(&mut self, e: LinExpr, rhs: f64) {
        self.equalities.push((e, rhs));
    }

    /// `e >= 0` in the semidefinite order.
    pub fn add_psd(&mut self, e: MatExpr) {
        self.psd.push(e);
    }

    pub(crate) fn objective_vector(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.n_vars);
        for &(v, w) in &self.objective {
            c[v] += w;
        }
        c
    }

    pub(crate) fn equality_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.equalities.len();
        let mut e = DMatrix::zeros(p, self.n_vars);
        let mut f = DVector::zeros(p);
        for (k, (expr, rhs)) in self.equalities.iter().enumerate() {
            for &(v, w) in &expr.terms {
                e[(k, v)] += w;
            }
            f[k] = *rhs;
        }
        (e, f)
    }
}

/// Read a symmetric variable back from a full variable vector.
pub fn symmetric_value(x: &SymmetricVar, y: &DVector<f64>) -> DMatrix<f64> {
    let n = x.dim();
    let mut m = DMatrix::zeros(n, n);
    for c in 0..n {
        for r in 0..=c {
            if let Some((v, mult)) = x.entry(r, c) {
                m[(r, c)] = mult * y[v.0];
                m[(c, r)] = m[(r, c)];
            }
        }
    }
    m
}

/// Read a vector variable back from a full variable vector.
pub fn vector_value(x: &VectorVar, y: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len(), (0..x.len()).map(|i| x.entry(i).map_or(0.0, |v| y[v.0])))
}
