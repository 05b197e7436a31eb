//! Continuous-time Lyapunov equation `M P + P M' + W = 0`.
//!
//! Bartels-Stewart on the complex Schur form: with `M = U T U*` and `T` upper
//! triangular, the transformed unknown is solved one column at a time from
//! the last column backwards.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::SdpError;

/// Solve `M P + P M' + W = 0` for symmetric `P`. `M` must be Hurwitz.
pub fn lyapunov_solve(m: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>, SdpError> {
    if !m.is_square() || w.shape() != m.shape() {
        return Err(SdpError::Malformed(format!(
            "Lyapunov operands have shapes {:?} and {:?}",
            m.shape(),
            w.shape()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let mc: DMatrix<Complex64> = m.map(|x| Complex64::new(x, 0.0));
    let schur = Schur::try_new(mc, f64::EPSILON, 10_000)
        .ok_or_else(|| SdpError::Numerical("Schur decomposition did not converge".into()))?;
    let (u, t) = schur.unpack();

    let abscissa = (0..n).map(|i| t[(i, i)].re).fold(f64::NEG_INFINITY, f64::max);
    if abscissa >= 0.0 {
        return Err(SdpError::Spectrum { abscissa });
    }

    // T Y + Y T* = C with C = -U* W U
    let wc: DMatrix<Complex64> = w.map(|x| Complex64::new(x, 0.0));
    let c = -(u.adjoint() * wc * &u);
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for j in (0..n).rev() {
        // (Y T*)[:, j] = sum_{k >= j} Y[:, k] conj(T[j, k])
        let mut rhs = c.column(j).into_owned();
        for k in (j + 1)..n {
            let coef = t[(j, k)].conj();
            rhs -= y.column(k) * coef;
        }
        let shift = t[(j, j)].conj();
        // back substitution with (T + shift I)
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for l in (i + 1)..n {
                acc -= t[(i, l)] * y[(l, j)];
            }
            y[(i, j)] = acc / (t[(i, i)] + shift);
        }
    }
    let p = &u * y * u.adjoint();
    let mut out = p.map(|z| z.re);
    for c in 0..n {
        for r in 0..c {
            let v = 0.5 * (out[(r, c)] + out[(c, r)]);
            out[(r, c)] = v;
            out[(c, r)] = v;
        }
    }
    Ok(out)
}

/// Relative residual `|M P + P M' + W| / (|M| |P| + |W|)` (Frobenius norms).
pub fn lyapunov_residual(m: &DMatrix<f64>, p: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let r = m * p + p * m.transpose() + w;
    r.norm() / (m.norm() * p.norm() + w.norm()).max(f64::MIN_POSITIVE)
}
