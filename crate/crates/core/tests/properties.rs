use proptest::prelude::*;

use trustvi::assessment::{required_sample_size, AcceptanceParams};
use trustvi::linalg::{norm, DenseMatrix};
use trustvi::optimizer::{OptimizerConfig, TrustVi};
use trustvi::subproblem::{cauchy_point, solve_tr_krylov, KrylovOptions, QuadraticModel};
use trustvi::trace::{check_accounting, read_trace_csv, write_trace_csv, TraceRecord};
use trustvi::vi::{jackknife_grad_norm_sd, GradientSample, VariationalParams};
use trustvi::zoo;

fn instance(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (
        prop::collection::vec(-3.0..3.0f64, n * n),
        prop::collection::vec(-2.0..2.0f64, n),
        0.01..5.0f64,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn krylov_step_is_feasible_and_dominates_cauchy((a, g, delta) in (1usize..=8).prop_flat_map(instance)) {
        let n = g.len();
        let h = DenseMatrix::from_fn(n, |i, j| 0.5 * (a[i * n + j] + a[j * n + i]));
        let qm = QuadraticModel::new(g, &h, delta).unwrap();
        let step = solve_tr_krylov(&qm, &KrylovOptions::default()).unwrap();
        let cp = cauchy_point(&qm).unwrap();
        prop_assert!(norm(&step.s) <= delta * (1.0 + 1e-10));
        prop_assert!(cp.model_improvement >= 0.0);
        prop_assert!(step.model_improvement >= cp.model_improvement - 1e-10 * cp.model_improvement.abs().max(1.0));
    }

    #[test]
    fn sample_size_scales_with_sigma_squared(sigma in 0.01..10.0f64, m in 0.01..10.0f64, delta in 0.05..1.0f64) {
        let ap = AcceptanceParams::default();
        prop_assume!(ap.gate(m, delta));
        let n1 = required_sample_size(sigma, m, delta, &ap).unwrap();
        let n2 = required_sample_size(2.0 * sigma, m, delta, &ap).unwrap();
        prop_assert!(n2 >= n1);
        prop_assert!(n2 + 4 >= 4 * n1 && n2 <= 4 * n1);
    }

    #[test]
    fn sample_size_falls_as_improvement_grows(sigma in 0.01..10.0f64, m in 0.01..10.0f64, delta in 0.05..1.0f64) {
        let ap = AcceptanceParams::default();
        prop_assume!(ap.gate(m, delta));
        let a = required_sample_size(sigma, m, delta, &ap).unwrap();
        let b = required_sample_size(sigma, 2.0 * m, delta, &ap).unwrap();
        prop_assert!(b <= a);
    }

    #[test]
    fn jackknife_is_scale_equivariant(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 16), c in 0.1..10.0f64) {
        let mk = |scale: f64| {
            let subs: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            let mean = (0..4).map(|k| subs.iter().map(|r| r[k]).sum::<f64>() / 16.0).collect();
            GradientSample { mean_gradient: mean, subbatch_gradients: subs, batch_size: 256, elbo: 0.0 }
        };
        let a = jackknife_grad_norm_sd(&mk(1.0)).unwrap();
        let b = jackknife_grad_norm_sd(&mk(c)).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((b - c * a).abs() <= 1e-9 * (c * a).max(1e-12));
    }

    #[test]
    fn flat_layout_round_trips(mu in prop::collection::vec(-10.0..10.0f64, 1..6), shift in -1.0..1.0f64) {
        let rho: Vec<f64> = mu.iter().map(|x| x * 0.1).collect();
        let w = VariationalParams::new(mu.clone(), rho.clone()).unwrap();
        prop_assert_eq!(VariationalParams::from_flat(&w.to_flat()).unwrap(), w.clone());
        let s = vec![shift; 2 * mu.len()];
        let moved = w.step(&s).unwrap();
        prop_assert!((moved.entropy() - w.entropy() - shift * mu.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn trace_csv_round_trips(rows in prop::collection::vec((0u64..1000, -1e6..1e6f64, 0.0..100.0f64, any::<bool>(), 0u64..50), 0..20)) {
        let mut cum = 0;
        let trace: Vec<TraceRecord> = rows.iter().enumerate().map(|(i, &(n, e, d, acc, c))| {
            cum += c + 1 + 2 * c;
            TraceRecord {
                iter: i as u64, cum_oracle_calls: cum, elbo_est: e, delta: d, m_prime: e / 7.0,
                ell_prime: f64::NAN, n_assess: n, sigma_hat: d * 3.0, accepted: acc,
                grad_calls: 1, hvp_calls: 2 * c, assess_calls: c, wall_time: 0.0,
            }
        }).collect();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        let back = read_trace_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), trace.len());
        for (a, b) in back.iter().zip(&trace) {
            prop_assert_eq!(a.elbo_est, b.elbo_est);
            prop_assert!(a.ell_prime.is_nan());
            prop_assert_eq!((a.iter, a.cum_oracle_calls, a.accepted, a.n_assess), (b.iter, b.cum_oracle_calls, b.accepted, b.n_assess));
        }
        check_accounting(&back, 0).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn iterations_obey_the_acceptance_and_radius_rules(seed in 0u64..10_000, budget in 20u64..400) {
        let m = zoo::by_name::<f64>("gaussian2").unwrap();
        let cfg = OptimizerConfig { seed, budget, ..OptimizerConfig::default() };
        let ap = cfg.acceptance();
        let opt = TrustVi::new(m.model(), cfg.clone()).unwrap();
        let mut st = opt.initial_state(VariationalParams::standard(2)).unwrap();
        let mut trace = Vec::new();
        while st.counts.total() < budget {
            let before = st.omega.clone();
            let det = opt.step(&mut st).unwrap();
            prop_assert!(det.delta_after <= cfg.delta_max);
            if det.accepted {
                let a = det.assessment.as_ref().unwrap();
                let mp = det.step.model_improvement;
                prop_assert!(a.ell_prime >= ap.eta * mp);
                prop_assert!(ap.eta * mp >= ap.lambda * det.delta_before * det.delta_before);
                prop_assert_eq!(det.delta_after, (cfg.gamma * det.delta_before).min(cfg.delta_max));
                prop_assert_eq!(st.omega.clone(), before.step(&det.step.s).unwrap());
            } else {
                prop_assert_eq!(det.delta_after, det.delta_before / cfg.gamma);
                prop_assert_eq!(&st.omega, &before);
            }
            trace.push(det.record);
        }
        check_accounting(&trace, 0).unwrap();
        prop_assert_eq!(trace.last().unwrap().cum_oracle_calls, st.counts.total());
    }
}
