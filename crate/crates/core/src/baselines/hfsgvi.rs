//! Stochastic Newton-CG without a trust region or step control.
//!
//! Each iteration solves `(-H) s = g` by plain conjugate gradient on fresh
//! gradient and Hessian batches and takes the full step. Indefinite `H` is
//! not corrected. A non-finite iterate or estimate ends the run as diverged.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, dot, norm};
use crate::optimizer::final_elbo;
use crate::rng::{streams, Stream};
use crate::scalar::Scalar;
use crate::trace::{OracleCounts, OracleUnits, RunResult, Termination, TraceRecord};
use crate::vi::{elbo_estimate, stochastic_gradient, BaseBatch, ModelSpec, StochasticHessian, VariationalParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonBaselineConfig {
    pub n_grad: usize,
    pub n_hvp: usize,
    /// CG iteration cap; `None` means `min(D, 250)`.
    pub cg_max_iter: Option<usize>,
    pub cg_tol: f64,
    pub monitor_batch: usize,
    pub max_iterations: Option<u64>,
    pub budget: u64,
    pub seed: u64,
}

impl Default for NewtonBaselineConfig {
    fn default() -> Self {
        Self {
            n_grad: 256,
            n_hvp: 85,
            cg_max_iter: None,
            cg_tol: 1e-6,
            monitor_batch: 256,
            max_iterations: None,
            budget: 10_000,
            seed: 0,
        }
    }
}

impl NewtonBaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grad < 2 || self.n_hvp == 0 || self.monitor_batch == 0 || self.cg_max_iter == Some(0) {
            return Err(Error::InvalidConfig("batch sizes and CG cap must be positive".into()));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::InvalidConfig("cg_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Plain CG for `A s = b` with `A` given by `apply`. Returns the iterate and
/// the number of products used. Stops on zero curvature along a direction.
pub fn conjugate_gradient<T: Scalar>(
    b: &[T],
    max_iter: usize,
    tol: f64,
    mut apply: impl FnMut(&[T]) -> Result<Vec<T>>,
) -> Result<(Vec<T>, usize)> {
    let n = b.len();
    let mut s = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = T::lit(tol) * norm(b);
    let mut used = 0;
    for _ in 0..max_iter {
        if rr.sqrt() <= stop {
            break;
        }
        let ap = apply(&p)?;
        used += 1;
        let curv = dot(&p, &ap);
        if curv == T::zero() || !curv.is_finite() {
            break;
        }
        let alpha = rr / curv;
        axpy(alpha, &p, &mut s);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
    }
    Ok((s, used))
}

pub fn hfsgvi_run<T: Scalar>(
    model: &dyn ModelSpec<T>,
    cfg: &NewtonBaselineConfig,
    omega0: VariationalParams<T>,
) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let d = model.latent_dim();
    let units = OracleUnits::default();
    let monitor = BaseBatch::seeded(cfg.monitor_batch, d, cfg.seed, streams::MONITOR);
    let mut grad_stream = Stream::new(cfg.seed, streams::GRADIENT);
    let mut hess_stream = Stream::new(cfg.seed, streams::HESSIAN);
    let cap = cfg.cg_max_iter.unwrap_or_else(|| (2 * d).min(250));
    let mut omega = omega0;
    let mut counts = OracleCounts::default();
    let mut trace = Vec::new();

    let termination = loop {
        if counts.total() >= cfg.budget {
            break Termination::Budget;
        }
        if cfg.max_iterations.is_some_and(|m| trace.len() as u64 >= m) {
            break Termination::IterationLimit;
        }
        let mut charges = OracleCounts { grad: units.gradient(cfg.n_grad), ..Default::default() };
        let gbatch = BaseBatch::generate(cfg.n_grad, d, &mut grad_stream);
        let hbatch = BaseBatch::generate(cfg.n_hvp, d, &mut hess_stream);
        let outcome = stochastic_gradient(model, &omega, &gbatch, 2).and_then(|gs| {
            let hess = StochasticHessian::new(model, &omega, hbatch)?;
            let (s, used) = conjugate_gradient(&gs.mean_gradient, cap, cfg.cg_tol, |v| {
                Ok(hess.apply(v)?.into_iter().map(|x| -x).collect())
            })?;
            Ok((s, used))
        });
        let (next, used) = match outcome {
            Ok((s, used)) if all_finite(&s) => (Some(omega.step(&s)?), used),
            Ok((_, used)) => (None, used),
            Err(e) if e.is_overflow() => (None, 0),
            Err(e) => return Err(e),
        };
        charges.hvp = units.hvp(cfg.n_hvp, used);
        counts.add(charges);
        let elbo = match &next {
            Some(n) if n.is_finite() => elbo_estimate(model, n, &monitor).map_or(f64::NEG_INFINITY, |v| v.as_f64()),
            _ => f64::NEG_INFINITY,
        };
        trace.push(TraceRecord {
            iter: trace.len() as u64,
            cum_oracle_calls: counts.total(),
            elbo_est: elbo,
            delta: f64::NAN,
            m_prime: f64::NAN,
            ell_prime: f64::NAN,
            n_assess: 0,
            sigma_hat: f64::NAN,
            accepted: elbo.is_finite(),
            grad_calls: charges.grad,
            hvp_calls: charges.hvp,
            assess_calls: 0,
            wall_time: start.elapsed().as_secs_f64(),
        });
        match next {
            Some(n) if elbo.is_finite() => omega = n,
            _ => break Termination::Diverged,
        }
    };

    let diverged = termination == Termination::Diverged;
    let moved = trace.iter().filter(|r| r.accepted).count();
    Ok(RunResult {
        model: model.name().to_string(),
        method: "hfsgvi".into(),
        seed: cfg.seed,
        accept_rate: if trace.is_empty() { f64::NAN } else { moved as f64 / trace.len() as f64 },
        trace,
        final_elbo: if diverged { f64::NEG_INFINITY } else { final_elbo(model, &omega, cfg.n_grad, cfg.seed) },
        final_params: omega.to_f64(),
        counts,
        diverged,
        termination,
    })
}

/// [`hfsgvi_run`] from `mu = 0, rho = 0`.
pub fn hfsgvi_optimize<T: Scalar>(model: &dyn ModelSpec<T>, cfg: &NewtonBaselineConfig) -> Result<RunResult> {
    hfsgvi_run(model, cfg, VariationalParams::standard(model.latent_dim()))
}
