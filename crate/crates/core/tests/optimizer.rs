use trustvi::baselines::{advi_optimize, hfsgvi_optimize, AdviConfig, NewtonBaselineConfig};
use trustvi::optimizer::{optimize, OptimizerConfig, TrustVi};
use trustvi::probe::{theory_probe, FrozenState, ProbeMode};
use trustvi::trace::check_accounting;
use trustvi::vi::VariationalParams;
use trustvi::zoo;

#[test]
fn reaches_the_mean_field_optimum_on_gaussian8() {
    let m = zoo::by_name::<f64>("gaussian8").unwrap();
    let star = m.truth.optimum.clone().unwrap();
    let cfg = OptimizerConfig { budget: 10_000, seed: 3, ..OptimizerConfig::default() };
    let r = optimize(m.model(), &cfg).unwrap();
    check_accounting(&r.trace, 0).unwrap();
    let mu_err = r.final_params.mu.iter().zip(&star.mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let sd_err =
        r.final_params.sigma().iter().zip(star.sigma()).map(|(a, b)| (a / b - 1.0).abs()).fold(0.0, f64::max);
    assert!(mu_err <= 1e-2 && sd_err <= 0.05, "mu {mu_err}, sigma {sd_err}");
}

#[test]
fn runs_are_reproducible() {
    let m = zoo::by_name::<f64>("logistic").unwrap();
    let cfg = OptimizerConfig { budget: 300, seed: 9, ..OptimizerConfig::default() };
    let csv = || {
        let mut buf = Vec::new();
        optimize(m.model(), &cfg).unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(csv(), csv());
}

#[test]
fn baselines_account_for_every_call() {
    let m = zoo::by_name::<f64>("linreg").unwrap();
    let a = advi_optimize(m.model(), &AdviConfig { budget: 500, seed: 1, ..AdviConfig::default() }).unwrap();
    check_accounting(&a.trace, 0).unwrap();
    assert!(a.counts.total() >= 500);
    let h = hfsgvi_optimize(m.model(), &NewtonBaselineConfig { budget: 500, seed: 1, ..NewtonBaselineConfig::default() })
        .unwrap();
    check_accounting(&h.trace, 0).unwrap();
}

#[test]
fn expected_progress_holds_at_a_frozen_state() {
    let m = zoo::by_name::<f64>("gaussian8").unwrap();
    let omega = VariationalParams::new(vec![0.5; 8], vec![-0.2; 8]).unwrap();
    let st = FrozenState { omega, delta: 0.2, n_grad: 256 };
    let r = theory_probe(&m, &OptimizerConfig::default(), &st, &ProbeMode::FullIteration, 200, 4).unwrap();
    assert!(r.phi_bound_holds, "{r:?}");
}

#[test]
fn bad_steps_are_rarely_accepted() {
    let m = zoo::by_name::<f64>("gaussian8").unwrap();
    let exact = m.analytic.clone().unwrap();
    let omega = VariationalParams::new(vec![0.5; 8], vec![-0.2; 8]).unwrap();
    let delta = 0.2;
    // a step against the gradient, with an inflated claimed improvement
    let g = exact.elbo_gradient(&omega);
    let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s: Vec<f64> = g.iter().map(|x| -x / gn * delta).collect();
    let mode = ProbeMode::FixedProposal { s, m_prime: gn * delta };
    let st = FrozenState { omega, delta, n_grad: 256 };
    let r = theory_probe(&m, &OptimizerConfig::default(), &st, &mode, 200, 6).unwrap();
    assert_eq!(r.bad_step_bound_holds, Some(true), "{r:?}");
    assert!(r.accept_freq < 0.05);
}

#[test]
fn optimizer_rejects_a_dimension_mismatch() {
    let m = zoo::by_name::<f64>("gaussian2").unwrap();
    let opt = TrustVi::new(m.model(), OptimizerConfig::default()).unwrap();
    assert!(opt.initial_state(VariationalParams::standard(3)).is_err());
}
