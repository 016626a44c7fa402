use trustvi::linalg::{norm, DenseMatrix};
use trustvi::rng::Stream;
use trustvi::subproblem::{
    cauchy_point, kkt_residual, solve_tr_exact, solve_tr_krylov, KrylovOptions, QuadraticModel, StepStatus,
};

fn random_symmetric(n: usize, s: &mut Stream) -> DenseMatrix<f64> {
    let a: Vec<f64> = (0..n * n).map(|_| s.standard_normal()).collect();
    DenseMatrix::from_fn(n, |i, j| 0.5 * (a[i * n + j] + a[j * n + i]))
}

/// `-(B B^T + shift I)`: concave with a controlled condition number.
fn random_concave(n: usize, s: &mut Stream) -> DenseMatrix<f64> {
    let b: Vec<f64> = (0..n * n).map(|_| s.standard_normal()).collect();
    DenseMatrix::from_fn(n, |i, j| {
        let v: f64 = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
        -(v + if i == j { 0.5 } else { 0.0 })
    })
}

fn model_value(g: &[f64], h: &DenseMatrix<f64>, s: &[f64]) -> f64 {
    let hs = h.matvec(s);
    g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + 0.5 * s.iter().zip(&hs).map(|(a, b)| a * b).sum::<f64>()
}

#[test]
fn krylov_is_feasible_and_beats_cauchy_on_random_instances() {
    let mut s = Stream::new(1, 1);
    let opts = KrylovOptions { tol: 1e-12, max_iter: None };
    for k in 0..100 {
        let n = 1 + k % 8;
        let h = if k % 2 == 0 { random_symmetric(n, &mut s) } else { random_concave(n, &mut s) };
        let mut g = vec![0.0; n];
        s.fill_standard_normal(&mut g);
        let delta = 0.05 + 3.0 * s.uniform();
        let qm = QuadraticModel::new(g.clone(), &h, delta).unwrap();
        let kr = solve_tr_krylov(&qm, &opts).unwrap();
        let cp = cauchy_point(&qm).unwrap();
        assert!(norm(&kr.s) <= delta * (1.0 + 1e-10), "instance {k}: infeasible");
        assert!(cp.model_improvement >= 0.0);
        assert!(kr.model_improvement >= cp.model_improvement - 1e-10, "instance {k}");
        let direct = model_value(&g, &h, &kr.s);
        assert!((direct - kr.model_improvement).abs() <= 1e-9 * direct.abs().max(1.0));
        let ex = solve_tr_exact(&g, &h, delta).unwrap();
        assert!(ex.step.model_improvement >= kr.model_improvement - 1e-9, "instance {k}: exact is not optimal");
        if kr.status == StepStatus::Interior && k % 2 == 1 {
            let rel = norm(&kr.s.iter().zip(&ex.step.s).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&ex.step.s);
            assert!(rel <= 1e-6, "instance {k}: interior mismatch {rel}");
        }
    }
}

#[test]
fn exact_solver_kkt_holds_including_the_hard_case() {
    let mut s = Stream::new(2, 1);
    for k in 0..50 {
        let n = 2 + k % 7;
        let h = random_symmetric(n, &mut s);
        let mut g = vec![0.0; n];
        s.fill_standard_normal(&mut g);
        let ex = solve_tr_exact(&g, &h, 0.7).unwrap();
        assert!(kkt_residual(&g, &h, 0.7, &ex) <= 1e-8, "instance {k}");
    }
    // g orthogonal to the top eigenvector of H, and the region large enough
    // that the shifted solution alone falls short of the boundary.
    let h = DenseMatrix::<f64>::from_diagonal(&[1.0, -1.0, -2.0]);
    let g = [0.0f64, 0.5, 0.5];
    let ex = solve_tr_exact(&g, &h, 2.0).unwrap();
    assert!(ex.hard_case);
    assert!((norm(&ex.step.s) - 2.0).abs() < 1e-10);
    assert!((ex.multiplier - 1.0).abs() < 1e-10);
    assert!(kkt_residual(&g, &h, 2.0, &ex) <= 1e-8);
}

#[test]
fn krylov_respects_its_iteration_cap() {
    let mut s = Stream::new(3, 1);
    let h = random_concave(8, &mut s);
    let g = vec![1.0; 8];
    let qm = QuadraticModel::new(g, &h, 100.0).unwrap();
    let step = solve_tr_krylov(&qm, &KrylovOptions { tol: 0.0, max_iter: Some(3) }).unwrap();
    assert_eq!(step.hvp_count, 3);
    assert_eq!(step.status, StepStatus::MaxIter);
}
