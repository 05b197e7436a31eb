//! Half-triangle vectorization of symmetric matrices.
//!
//! Entries are stored column by column over the upper triangle. Off-diagonal
//! entries carry a factor of `sqrt(2)` so that `svec(A) . svec(B) == <A, B>`
//! (the trace inner product). Symmetric matrix variables in a
//! [`ConicProgram`](crate::ConicProgram) use the same convention: the scalar
//! decision variable behind an off-diagonal entry `X[i][j]` equals
//! `sqrt(2) * X[i][j]`.

use nalgebra::{DMatrix, DVector};

/// Length of the half-triangle vector for an `n x n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of `(i, j)` (either triangle) in the half-triangle vector.
pub fn svec_index(i: usize, j: usize) -> usize {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    c * (c + 1) / 2 + r
}

/// Scale applied to entry `(i, j)` when it is stored.
pub fn svec_scale(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        std::f64::consts::SQRT_2
    }
}

/// Vectorize the upper triangle of `m`. Only the upper triangle is read.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    assert!(m.is_square(), "svec of a non-square matrix");
    let n = m.nrows();
    let mut v = DVector::zeros(svec_len(n));
    for c in 0..n {
        for r in 0..=c {
            v[svec_index(r, c)] = svec_scale(r, c) * m[(r, c)];
        }
    }
    v
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>) -> DMatrix<f64> {
    let n = dim_from_len(v.len()).expect("length is not a triangular number");
    let mut m = DMatrix::zeros(n, n);
    for c in 0..n {
        for r in 0..=c {
            let x = v[svec_index(r, c)] / svec_scale(r, c);
            m[(r, c)] = x;
            m[(c, r)] = x;
        }
    }
    m
}

/// Recover `n` from `n (n + 1) / 2`, if `len` is triangular.
pub fn dim_from_len(len: usize) -> Option<usize> {
    let n = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (n..=n + 1).find(|&k| svec_len(k) == len)
}
