//! Matrix-exponential solution of the linearized closed loop, used as a
//! reference for the nonlinear integrator.

use nalgebra::{DMatrix, DVector};

use super::engine::SimTrace;
use crate::traffic::EquilibriumState;

/// `x(t) = exp(A t) x0` at each requested time.
pub fn linear_response(a: &DMatrix<f64>, x0: &DVector<f64>, times: &[f64]) -> Vec<DVector<f64>> {
    times.iter().map(|&t| (a * t).exp() * x0).collect()
}

/// Error coordinates `(s_i - s_i*, v_i - v*)` of trace sample `k`.
pub fn error_state(trace: &SimTrace, k: usize, reference: &EquilibriumState) -> DVector<f64> {
    let s_star = reference.spacings();
    let n = trace.velocities[k].len();
    DVector::from_fn(2 * n, |j, _| {
        let i = j / 2;
        if j % 2 == 0 {
            trace.spacings[k][i] - s_star[i]
        } else {
            trace.velocities[k][i] - reference.v_star
        }
    })
}

/// Largest state infinity-norm gap between the trace and the linear response
/// started from the trace's first sample.
pub fn max_linear_deviation(trace: &SimTrace, a_cl: &DMatrix<f64>, reference: &EquilibriumState) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    let x0 = error_state(trace, 0, reference);
    let t0 = trace.times[0];
    let rel: Vec<f64> = trace.times.iter().map(|t| t - t0).collect();
    linear_response(a_cl, &x0, &rel)
        .iter()
        .enumerate()
        .map(|(k, x)| (error_state(trace, k, reference) - x).amax())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_decay() {
        let a = DMatrix::from_element(1, 1, -2.0);
        let x = linear_response(&a, &DVector::from_element(1, 3.0), &[0.0, 0.5, 1.0]);
        for (xi, t) in x.iter().zip([0.0f64, 0.5, 1.0]) {
            assert!((xi[0] - 3.0 * (-2.0 * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_norm() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let x = linear_response(&a, &DVector::from_vec(vec![1.0, 0.0]), &[std::f64::consts::FRAC_PI_2]);
        assert!(x[0][0].abs() < 1e-12 && (x[0][1] - 1.0).abs() < 1e-12);
    }
}
