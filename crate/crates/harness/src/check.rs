//! Quick self-tests of the estimators and solvers, run by `check`.

use serde::Serialize;
use trustvi::assessment::{bad_step_bound, required_sample_size, AcceptanceParams};
use trustvi::linalg::{dot, norm, DenseMatrix};
use trustvi::optimizer::{optimize, OptimizerConfig};
use trustvi::rng::Stream;
use trustvi::subproblem::{cauchy_point, kkt_residual, solve_tr_exact, solve_tr_krylov, KrylovOptions, QuadraticModel};
use trustvi::trace::check_accounting;
use trustvi::vi::{elbo_estimate, stochastic_gradient, stochastic_hvp, BaseBatch, VariationalParams};
use trustvi::zoo;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_omega(d: usize, s: &mut Stream) -> VariationalParams<f64> {
    let mu = (0..d).map(|_| 0.5 * s.standard_normal::<f64>()).collect();
    let rho = (0..d).map(|_| 0.3 * s.standard_normal::<f64>()).collect();
    VariationalParams { mu, rho }
}

/// Largest relative error of the stochastic gradient against central
/// differences of the ELBO estimate on the same draws.
pub fn gradient_error(model: &str, points: usize, seed: u64) -> trustvi::Result<f64> {
    let m = zoo::by_name::<f64>(model)?;
    let d = m.latent_dim();
    let mut s = Stream::new(seed, 11);
    let mut worst = 0.0f64;
    for p in 0..points {
        let omega = random_omega(d, &mut s);
        let batch = BaseBatch::seeded(32, d, seed ^ p as u64, 1);
        let g = stochastic_gradient(m.model(), &omega, &batch, 16)?.mean_gradient;
        let flat = omega.to_flat();
        for k in 0..flat.len() {
            let h = 1e-5 * flat[k].abs().max(1.0);
            let at = |x: f64| -> trustvi::Result<f64> {
                let mut w = flat.clone();
                w[k] = x;
                elbo_estimate(m.model(), &VariationalParams::from_flat(&w)?, &batch)
            };
            let fd = (at(flat[k] + h)? - at(flat[k] - h)?) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Largest relative errors of the stochastic HVP against differences of the
/// gradient, and of its asymmetry `|u'Hv - v'Hu|`.
pub fn hvp_errors(model: &str, points: usize, seed: u64) -> trustvi::Result<(f64, f64)> {
    let m = zoo::by_name::<f64>(model)?;
    let d = m.latent_dim();
    let mut s = Stream::new(seed, 12);
    let (mut fd_worst, mut sym_worst) = (0.0f64, 0.0f64);
    for p in 0..points {
        let omega = random_omega(d, &mut s);
        let batch = BaseBatch::seeded(32, d, seed ^ p as u64, 2);
        let mut u = vec![0.0; 2 * d];
        let mut v = vec![0.0; 2 * d];
        s.fill_standard_normal(&mut u);
        s.fill_standard_normal(&mut v);
        let hv = stochastic_hvp(m.model(), &omega, &batch, &v)?;
        let hu = stochastic_hvp(m.model(), &omega, &batch, &u)?;
        let h = 1e-6;
        let grad_at = |sign: f64| -> trustvi::Result<Vec<f64>> {
            let w: Vec<f64> = omega.to_flat().iter().zip(&v).map(|(a, b)| a + sign * h * b).collect();
            Ok(stochastic_gradient(m.model(), &VariationalParams::from_flat(&w)?, &batch, 16)?.mean_gradient)
        };
        let (gp, gm) = (grad_at(1.0)?, grad_at(-1.0)?);
        let scale = norm(&hv).max(1.0);
        let diff: Vec<f64> = (0..2 * d).map(|k| (gp[k] - gm[k]) / (2.0 * h) - hv[k]).collect();
        fd_worst = fd_worst.max(norm(&diff) / scale);
        let (a, b) = (dot(&u, &hv), dot(&v, &hu));
        sym_worst = sym_worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
    }
    Ok((fd_worst, sym_worst))
}

fn random_instance(n: usize, s: &mut Stream) -> (Vec<f64>, DenseMatrix<f64>) {
    let a: Vec<f64> = (0..n * n).map(|_| s.standard_normal()).collect();
    let h = DenseMatrix::from_fn(n, |i, j| 0.5 * (a[i * n + j] + a[j * n + i]));
    let mut g = vec![0.0; n];
    s.fill_standard_normal(&mut g);
    (g, h)
}

fn subproblem_check(seed: u64) -> trustvi::Result<CheckResult> {
    let mut s = Stream::new(seed, 13);
    let mut failures = 0;
    let mut worst_kkt = 0.0f64;
    for k in 0..50 {
        let (g, h) = random_instance(1 + k % 8, &mut s);
        let delta = 0.1 + 2.0 * s.uniform();
        let qm = QuadraticModel::new(g.clone(), &h, delta)?;
        let kr = solve_tr_krylov(&qm, &KrylovOptions::default())?;
        let cp = cauchy_point(&qm)?;
        let ex = solve_tr_exact(&g, &h, delta)?;
        worst_kkt = worst_kkt.max(kkt_residual(&g, &h, delta, &ex));
        let ok = norm(&kr.s) <= delta * (1.0 + 1e-10)
            && kr.model_improvement >= cp.model_improvement - 1e-10
            && cp.model_improvement >= 0.0
            && ex.step.model_improvement >= kr.model_improvement - 1e-9;
        failures += usize::from(!ok);
    }
    Ok(CheckResult {
        name: "trust-region subproblem",
        passed: failures == 0 && worst_kkt <= 1e-8,
        detail: format!("{failures} ordering failures, worst KKT residual {worst_kkt:.2e}"),
    })
}

fn sample_size_check(seed: u64) -> trustvi::Result<CheckResult> {
    let mut s = Stream::new(seed, 14);
    let ap = AcceptanceParams::default();
    let mut violations = 0;
    for _ in 0..20 {
        let sigma = 10f64.powf(-1.0 + 2.0 * s.uniform());
        let delta = 10f64.powf(-1.5 + 1.5 * s.uniform());
        let m = ap.lambda * delta * delta / ap.eta * (1.0 + 20.0 * s.uniform());
        let n = required_sample_size(sigma, m, delta, &ap)? as f64;
        let (a, t1, t2) = (ap.eta * m, ap.tau1() * delta * delta, ap.tau2() * delta * delta);
        let lo = (-a / 2.0).max(-t2);
        for i in 0..2000 {
            let y = lo + 10f64.powf(-10.0 + 15.0 * i as f64 / 1999.0);
            if bad_step_bound(sigma, a, t1, t2, y) > n {
                violations += 1;
            }
        }
    }
    Ok(CheckResult { name: "sample-size rule", passed: violations == 0, detail: format!("{violations} grid violations") })
}

fn accounting_check(seed: u64) -> trustvi::Result<CheckResult> {
    let m = zoo::by_name::<f64>("gaussian2")?;
    let r = optimize(m.model(), &OptimizerConfig { budget: 200, seed, ..OptimizerConfig::default() })?;
    let res = check_accounting(&r.trace, 0);
    Ok(CheckResult {
        name: "oracle accounting",
        passed: res.is_ok() && r.trace.last().is_some_and(|t| t.cum_oracle_calls == r.counts.total()),
        detail: res.err().map_or_else(|| format!("{} iterations", r.trace.len()), |e| e.to_string()),
    })
}

/// Run every self-test. An estimator or solver error counts as a failure.
pub fn run_checks(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let failed = |name, e: trustvi::Error| CheckResult { name, passed: false, detail: e.to_string() };
    for model in ["gaussian8", "logistic", "funnel10"] {
        out.push(match gradient_error(model, 3, seed) {
            Ok(w) => CheckResult {
                name: "gradient vs differences",
                passed: w <= 1e-5,
                detail: format!("{model}: worst relative error {w:.3e}"),
            },
            Err(e) => failed("gradient vs differences", e),
        });
        out.push(match hvp_errors(model, 3, seed) {
            Ok((fd, sym)) => CheckResult {
                name: "hvp vs differences",
                passed: fd <= 1e-4 && sym <= 1e-4,
                detail: format!("{model}: difference error {fd:.3e}, asymmetry {sym:.3e}"),
            },
            Err(e) => failed("hvp vs differences", e),
        });
    }
    for check in [subproblem_check, sample_size_check, accounting_check] {
        out.push(check(seed).unwrap_or_else(|e| failed("self-test", e)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_checks(1) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
