use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ringflow_sdp::{solve, ConicProgram, MatExpr, SolveStatus, SolverSettings, SymmetricVar};

fn settings() -> SolverSettings {
    SolverSettings::default()
}

/// `X - M >= 0`
fn dominance(p: &mut ConicProgram, x: &SymmetricVar, m: &DMatrix<f64>) {
    let n = m.nrows();
    let mut e = MatExpr::zeros(n);
    for c in 0..n {
        for r in 0..=c {
            e.add_sym_entry(r, c, x, r, c, 1.0);
        }
    }
    e.add_constant(&(-m));
    p.add_psd(e);
}

fn trace_objective(p: &mut ConicProgram, x: &SymmetricVar, weight: &DMatrix<f64>) {
    let n = x.dim();
    for c in 0..n {
        for r in 0..=c {
            if let Some((v, mult)) = x.entry(r, c) {
                let w = if r == c { weight[(r, r)] } else { 2.0 * weight[(r, c)] };
                p.add_objective(v, w * mult);
            }
        }
    }
}

#[test]
fn scalar_lower_bound() {
    let mut p = ConicProgram::new();
    let x = p.add_scalar();
    p.add_objective(x, 1.0);
    let mut e = MatExpr::zeros(1);
    e.add(0, 0, x, 1.0);
    e.add_constant_entry(0, 0, -1.0);
    p.add_psd(e);
    let out = solve(&p, &settings()).unwrap();
    assert_eq!(out.status, SolveStatus::Optimal);
    assert!((out.value(x) - 1.0).abs() < 1e-7);
    assert!((out.objective - 1.0).abs() < 1e-7);
}

#[test]
fn trace_dominance_projects_onto_cone() {
    // min Tr(X) s.t. X >= M, X >= 0
    // M has eigenvalues {-1, 2}; rotate so the problem is not diagonal
    let (c, s) = (0.6f64, 0.8f64);
    let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let m = &rot * DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0])) * rot.transpose();
    let oracle: f64 = m.clone().symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0)).sum();
    assert!((oracle - 2.0).abs() < 1e-12);

    let mut p = ConicProgram::new();
    let x = p.add_symmetric(2);
    dominance(&mut p, &x, &m);
    dominance(&mut p, &x, &DMatrix::zeros(2, 2));
    trace_objective(&mut p, &x, &DMatrix::identity(2, 2));
    let out = solve(&p, &settings()).unwrap();
    assert_eq!(out.status, SolveStatus::Optimal);
    assert!((out.objective - oracle).abs() < 1e-6);
    let xv = out.symmetric(&x);
    assert!((xv.trace() - oracle).abs() < 1e-6);
    assert!(xv.symmetric_eigen().eigenvalues.min() > -1e-7);
}

#[test]
fn lyapunov_feasibility_for_negative_identity() {
    // find X >= eps I with A0 X + X A0' <= -I for A0 = -I; minimal trace gives X = I / 2
    let n = 3;
    let eps = 1e-6;
    let a0 = -DMatrix::<f64>::identity(n, n);
    let mut p = ConicProgram::new();
    let x = p.add_symmetric(n);
    // -(A0 X + X A0') - I >= 0
    let mut lyap = MatExpr::zeros(n);
    for c in 0..n {
        for r in 0..=c {
            for k in 0..n {
                // (A0 X)_{rc} = sum_k A0[r,k] X[k,c]
                if a0[(r, k)] != 0.0 {
                    lyap.add_sym_entry(r, c, &x, k, c, -a0[(r, k)]);
                }
                if a0[(c, k)] != 0.0 {
                    lyap.add_sym_entry(r, c, &x, r, k, -a0[(c, k)]);
                }
            }
        }
    }
    lyap.add_constant(&(-DMatrix::identity(n, n)));
    p.add_psd(lyap);
    dominance(&mut p, &x, &(DMatrix::identity(n, n) * eps));
    trace_objective(&mut p, &x, &DMatrix::identity(n, n));
    let out = solve(&p, &settings()).unwrap();
    assert_eq!(out.status, SolveStatus::Optimal);
    let xv = out.symmetric(&x);
    assert!((&xv - DMatrix::identity(n, n) * 0.5).abs().max() < 1e-6);
    let residual = &a0 * &xv + &xv * a0.transpose() + DMatrix::identity(n, n);
    assert!(residual.symmetric_eigen().eigenvalues.max() < 1e-6);
}

#[test]
fn detects_infeasible() {
    // x >= 0 and -x - 1 >= 0
    let mut p = ConicProgram::new();
    let x = p.add_scalar();
    p.add_objective(x, 1.0);
    let mut a = MatExpr::zeros(1);
    a.add(0, 0, x, 1.0);
    p.add_psd(a);
    let mut b = MatExpr::zeros(1);
    b.add(0, 0, x, -1.0);
    b.add_constant_entry(0, 0, -1.0);
    p.add_psd(b);
    let out = solve(&p, &settings()).unwrap();
    assert_eq!(out.status, SolveStatus::Infeasible);
}

#[test]
fn detects_infeasible_matrix_constraint() {
    // X >= I and X <= 0.5 I cannot hold together
    let n = 3;
    let mut p = ConicProgram::new();
    let x = p.add_symmetric(n);
    dominance(&mut p, &x, &DMatrix::identity(n, n));
    let mut upper = MatExpr::zeros(n);
    for c in 0..n {
        for r in 0..=c {
            upper.add_sym_entry(r, c, &x, r, c, -1.0);
        }
    }
    upper.add_constant(&(DMatrix::identity(n, n) * 0.5));
    p.add_psd(upper);
    trace_objective(&mut p, &x, &DMatrix::identity(n, n));
    let out = solve(&p, &settings()).unwrap();
    assert_eq!(out.status, SolveStatus::Infeasible);
}

#[test]
fn detects_unbounded() {
    // min x s.t. 1 - x >= 0
    let mut p = ConicProgram::new();
    let x = p.add_scalar();
    p.add_objective(x, 1.0);
    let mut e = MatExpr::zeros(1);
    e.add(0, 0, x, -1.0);
    e.add_constant_entry(0, 0, 1.0);
    p.add_psd(e);
    let out = solve(&p, &settings()).unwrap();
    assert_eq!(out.status, SolveStatus::Unbounded);
}

#[test]
fn structural_zeros_are_respected() {
    let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, -1.0]);
    let mut p = ConicProgram::new();
    let x = p.add_symmetric_sparse(3, |i, j| i == j || (i < 2 && j < 2));
    dominance(&mut p, &x, &m);
    dominance(&mut p, &x, &DMatrix::zeros(3, 3));
    trace_objective(&mut p, &x, &DMatrix::identity(3, 3));
    let out = solve(&p, &settings()).unwrap();
    assert_eq!(out.status, SolveStatus::Optimal);
    let xv = out.symmetric(&x);
    assert_eq!(xv[(0, 2)], 0.0);
    assert_eq!(xv[(1, 2)], 0.0);
    assert!((out.objective - 4.0).abs() < 1e-6);
}

fn random_dominance(seed: u64, scale: f64) -> (ConicProgram, SymmetricVar) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let m = (&g + g.transpose()) * 0.5;
    let h = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let weight = &h * h.transpose() + DMatrix::identity(n, n);
    let mut p = ConicProgram::new();
    let x = p.add_symmetric(n);
    dominance(&mut p, &x, &m);
    trace_objective(&mut p, &x, &(weight * scale));
    (p, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weak_duality_holds(seed in 0u64..10_000) {
        let (p, _) = random_dominance(seed, 1.0);
        let s = settings();
        let out = solve(&p, &s).unwrap();
        prop_assert_eq!(out.status, SolveStatus::Optimal);
        let tol = s.gap_tol * (1.0 + out.objective.abs() + out.dual_objective.abs());
        prop_assert!(out.objective - out.dual_objective >= -tol);
        prop_assert!(out.max_psd_violation <= s.feas_tol);
    }

    #[test]
    fn objective_scaling_keeps_optimizer(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let s = settings();
        let (p1, x1) = random_dominance(seed, 1.0);
        let (p2, x2) = random_dominance(seed, scale);
        let o1 = solve(&p1, &s).unwrap();
        let o2 = solve(&p2, &s).unwrap();
        prop_assert_eq!(o1.status, o2.status);
        let diff = (o1.symmetric(&x1) - o2.symmetric(&x2)).abs().max();
        let size = 1.0 + o1.symmetric(&x1).abs().max();
        prop_assert!((o2.objective / scale - o1.objective).abs() <= 10.0 * s.gap_tol * (1.0 + o1.objective.abs()));
        prop_assert!(diff <= 1e-4 * size);
    }
}

#[test]
fn repeated_solves_are_bit_identical() {
    let (p, _) = random_dominance(42, 1.0);
    let a = solve(&p, &settings()).unwrap();
    let b = solve(&p, &settings()).unwrap();
    assert_eq!(a.y.as_slice(), b.y.as_slice());
    assert_eq!(a.iterations, b.iterations);
}
