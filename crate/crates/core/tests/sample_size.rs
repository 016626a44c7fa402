use trustvi::assessment::{required_sample_size, required_sample_size_small_radius, AcceptanceParams};
use trustvi::rng::Stream;

/// Right-hand side of the bad-step inequality, written out independently.
fn rhs(sigma: f64, a: f64, tau1_d2: f64, tau2_d2: f64, y: f64) -> f64 {
    let log = ((tau2_d2 + y) / tau1_d2).ln();
    if log <= 0.0 {
        0.0
    } else {
        2.0 * sigma * sigma * log / (a + y).powi(2)
    }
}

/// Largest violation of `n >= rhs(y)` over a log-spaced grid of `points`
/// offsets above the lower end of the admissible range.
fn worst_violation(n: usize, sigma: f64, a: f64, t1: f64, t2: f64, points: usize) -> f64 {
    let lo = (-a / 2.0).max(-t2);
    let span = 1e4 * (a.abs() + t2 + 1.0);
    let (e0, e1) = (-12.0f64, span.log10());
    let mut worst = f64::NEG_INFINITY;
    for i in 0..points {
        let y = lo + 10f64.powf(e0 + (e1 - e0) * i as f64 / (points - 1) as f64);
        worst = worst.max(rhs(sigma, a, t1, t2, y) - n as f64);
    }
    worst
}

/// `eta`, `lambda` and `alpha` chosen from their admissible ranges.
fn random_params(s: &mut Stream) -> AcceptanceParams {
    let gamma = 1.2 + 2.0 * s.uniform();
    let lambda = 10f64.powf(-4.0 + 3.0 * s.uniform());
    let alpha_min = lambda / (1.0 - gamma.powi(-2));
    AcceptanceParams {
        eta: 0.02 + 0.48 * s.uniform(),
        lambda,
        alpha: alpha_min * (1.05 + 20.0 * s.uniform()),
        gamma,
        ..AcceptanceParams::default()
    }
}

#[test]
fn sample_size_satisfies_the_bound_on_a_dense_grid() {
    let mut s = Stream::new(99, 1);
    for case in 0..50 {
        let ap = random_params(&mut s);
        ap.validate().unwrap();
        let sigma = 10f64.powf(-2.0 + 3.0 * s.uniform());
        let delta = 10f64.powf(-2.0 + 2.5 * s.uniform());
        let m = ap.lambda * delta * delta / ap.eta * (1.0 + 50.0 * s.uniform());
        let n = required_sample_size(sigma, m, delta, &ap).unwrap();
        let (t1, t2) = (ap.tau1() * delta * delta, ap.tau2() * delta * delta);
        let worst = worst_violation(n, sigma, ap.eta * m, t1, t2, 10_000);
        assert!(worst <= 0.0, "case {case}: violated by {worst} (n = {n})");
        // the grid maximum comes within grid resolution of n
        let grid_sup = worst + n as f64;
        assert!(grid_sup >= (n as f64 - 1.0) * (1.0 - 1e-4), "case {case}: n = {n} but grid max {grid_sup}");
    }
}

#[test]
fn hand_worked_instance() {
    // sigma = 1, eta m' = 1, delta = 1, tau1 = 0.5, tau2 = 4
    let gamma: f64 = 2.0;
    let alpha = 4.0 / (gamma.powi(2) - gamma.powi(-2));
    let lambda = alpha * (1.0 - gamma.powi(-2)) - 0.5;
    let ap = AcceptanceParams { eta: 0.5, lambda, alpha, gamma, ..AcceptanceParams::default() };
    assert!((ap.tau1() - 0.5).abs() < 1e-12 && (ap.tau2() - 4.0).abs() < 1e-12);
    let n = required_sample_size(1.0, 2.0, 1.0, &ap).unwrap();
    let grid_sup = (1..=2_000_000)
        .map(|i| -0.5 + i as f64 * 5e-6)
        .map(|y| rhs(1.0, 1.0, 0.5, 4.0, y))
        .fold(0.0f64, f64::max);
    assert_eq!(n, grid_sup.ceil() as usize);
}

#[test]
fn small_radius_rule_worked_example() {
    // 2 ln 4 / (0.01 * 0.36 * 1.0) rounded up
    let n = required_sample_size_small_radius(1.0, 0.6, 1.0, 0.1, 0.75).unwrap();
    let expect = (-2.0 * (0.25f64).ln() / (0.01 * 0.36)).ceil() as usize;
    assert_eq!(n, expect);
    assert_eq!(n, 771);
    // quadrupling when delta halves
    let half = required_sample_size_small_radius(1.0, 0.6, 0.5, 0.1, 0.75).unwrap();
    assert!((half as f64 / n as f64 - 4.0).abs() < 0.01);
}
