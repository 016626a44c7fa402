//! Adaptive-step stochastic gradient ascent after the ADVI reference
//! implementation.
//!
//! The step for coordinate `j` at iteration `i` is
//! `eta * i^(-1/2 + 1e-16) / (tau + sqrt(s_j))` with
//! `s = a g^2 + (1 - a) s` and `s` started at `g_1^2`. A short trial of
//! every rate in the grid picks `eta`; the main phase then restarts from the
//! initial iterate.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::final_elbo;
use crate::rng::{streams, Stream};
use crate::scalar::Scalar;
use crate::trace::{OracleCounts, OracleUnits, RunResult, Termination, TraceRecord};
use crate::vi::{elbo_estimate, stochastic_gradient, BaseBatch, ModelSpec, VariationalParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdviConfig {
    pub adaptation_iters: usize,
    pub eta_grid: Vec<f64>,
    pub tau: f64,
    /// Weight of the newest squared gradient in the running average.
    pub decay: f64,
    pub n_grad: usize,
    /// Draws used to score each trial rate, charged as assessment units.
    pub trial_eval_batch: usize,
    pub monitor_batch: usize,
    pub max_iterations: Option<u64>,
    pub budget: u64,
    pub seed: u64,
}

impl Default for AdviConfig {
    fn default() -> Self {
        Self {
            adaptation_iters: 50,
            eta_grid: vec![100.0, 10.0, 1.0, 0.1, 0.01, 0.001],
            tau: 1.0,
            decay: 0.1,
            n_grad: 256,
            trial_eval_batch: 256,
            monitor_batch: 256,
            max_iterations: None,
            budget: 10_000,
            seed: 0,
        }
    }
}

impl AdviConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.eta_grid.is_empty() || self.eta_grid.len() > 6 {
            return bad("eta_grid must hold 1 to 6 rates");
        }
        if self.eta_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("learning rates must be positive and finite");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) || !(self.tau > 0.0) {
            return bad("decay must lie in (0, 1] and tau must be positive");
        }
        if self.n_grad < 2 || self.trial_eval_batch == 0 || self.monitor_batch == 0 {
            return bad("batch sizes must be positive");
        }
        Ok(())
    }
}

struct Sgd<T> {
    omega: VariationalParams<T>,
    avg_sq: Option<Vec<T>>,
    i: u64,
    eta: f64,
}

enum SgdStep {
    Moved,
    Reverted,
}

impl<T: Scalar> Sgd<T> {
    fn new(omega: VariationalParams<T>, eta: f64) -> Self {
        Self { omega, avg_sq: None, i: 0, eta }
    }

    fn step(&mut self, model: &dyn ModelSpec<T>, batch: &BaseBatch<T>, cfg: &AdviConfig) -> Result<SgdStep> {
        let g = match stochastic_gradient(model, &self.omega, batch, 2) {
            Ok(gs) => gs.mean_gradient,
            Err(e) if e.is_overflow() => return Ok(SgdStep::Reverted),
            Err(e) => return Err(e),
        };
        self.i += 1;
        let a = T::lit(cfg.decay);
        let s = match self.avg_sq.take() {
            None => g.iter().map(|&x| x * x).collect::<Vec<_>>(),
            Some(prev) => prev.iter().zip(&g).map(|(&p, &x)| a * x * x + (T::one() - a) * p).collect(),
        };
        let scale = self.eta * (self.i as f64).powf(-0.5 + 1e-16);
        let step: Vec<T> =
            g.iter().zip(&s).map(|(&x, &sj)| T::lit(scale) * x / (T::lit(cfg.tau) + sj.sqrt())).collect();
        self.avg_sq = Some(s);
        let next = self.omega.step(&step)?;
        if !next.is_finite() {
            return Ok(SgdStep::Reverted);
        }
        self.omega = next;
        Ok(SgdStep::Moved)
    }

    /// Halve the rate and restart the schedule. The iterate was never replaced.
    fn backoff(&mut self) {
        self.eta *= 0.5;
        self.avg_sq = None;
        self.i = 0;
    }
}

fn nan_record(iter: u64, cum: u64, elbo: f64, accepted: bool, charges: OracleCounts) -> TraceRecord {
    TraceRecord {
        iter,
        cum_oracle_calls: cum,
        elbo_est: elbo,
        delta: f64::NAN,
        m_prime: f64::NAN,
        ell_prime: f64::NAN,
        n_assess: 0,
        sigma_hat: f64::NAN,
        accepted,
        grad_calls: charges.grad,
        hvp_calls: charges.hvp,
        assess_calls: charges.assess,
        wall_time: 0.0,
    }
}

/// Run ADVI-style SGD from `omega0`. Trial iterations appear in the trace.
pub fn advi_run<T: Scalar>(model: &dyn ModelSpec<T>, cfg: &AdviConfig, omega0: VariationalParams<T>) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let d = model.latent_dim();
    let units = OracleUnits::default();
    let monitor = BaseBatch::seeded(cfg.monitor_batch, d, cfg.seed, streams::MONITOR);
    let monitor_elbo =
        |om: &VariationalParams<T>| elbo_estimate(model, om, &monitor).map_or(f64::NEG_INFINITY, |v| v.as_f64());
    let mut grad_stream = Stream::new(cfg.seed, streams::GRADIENT);
    let mut eval_stream = Stream::new(cfg.seed, streams::ADAPT);
    let mut counts = OracleCounts::default();
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut moved_steps = 0u64;
    let over_budget = |counts: &OracleCounts| counts.total() >= cfg.budget;
    let at_limit = |trace: &Vec<TraceRecord>| cfg.max_iterations.is_some_and(|m| trace.len() as u64 >= m);

    let push = |trace: &mut Vec<TraceRecord>, counts: &mut OracleCounts, charges: OracleCounts, elbo: f64, ok: bool| {
        counts.add(charges);
        let mut r = nan_record(trace.len() as u64, counts.total(), elbo, ok, charges);
        r.wall_time = start.elapsed().as_secs_f64();
        trace.push(r);
    };

    // Trials: every rate from omega0, scored on a fresh batch each.
    let mut best: Option<(f64, f64)> = None;
    'trials: for &eta in &cfg.eta_grid {
        let mut sgd = Sgd::new(omega0.clone(), eta);
        let mut failed = false;
        for _ in 0..cfg.adaptation_iters {
            if over_budget(&counts) || at_limit(&trace) {
                break 'trials;
            }
            let batch = BaseBatch::generate(cfg.n_grad, d, &mut grad_stream);
            let charges = OracleCounts { grad: units.gradient(cfg.n_grad), ..Default::default() };
            let ok = matches!(sgd.step(model, &batch, cfg)?, SgdStep::Moved);
            if ok {
                moved_steps += 1;
            }
            push(&mut trace, &mut counts, charges, monitor_elbo(&sgd.omega), ok);
            if !ok {
                failed = true;
                break;
            }
        }
        let eval = BaseBatch::generate(cfg.trial_eval_batch, d, &mut eval_stream);
        let score = if failed {
            f64::NEG_INFINITY
        } else {
            elbo_estimate(model, &sgd.omega, &eval).map_or(f64::NEG_INFINITY, |v| v.as_f64())
        };
        if let Some(last) = trace.last_mut() {
            let extra = units.assessment(cfg.trial_eval_batch);
            last.assess_calls += extra;
            last.cum_oracle_calls += extra;
            counts.assess += extra;
        }
        // Ties go to the smaller rate.
        best = match best {
            None => Some((eta, score)),
            Some((be, bs)) if score > bs || (score == bs && eta < be) => Some((eta, score)),
            keep => keep,
        };
    }
    let eta = best.map_or(cfg.eta_grid[0], |(e, _)| e);
    log::debug!("advi selected eta = {eta}");

    let mut sgd = Sgd::new(omega0, eta);
    let termination = loop {
        if over_budget(&counts) {
            break Termination::Budget;
        }
        if at_limit(&trace) {
            break Termination::IterationLimit;
        }
        let batch = BaseBatch::generate(cfg.n_grad, d, &mut grad_stream);
        let charges = OracleCounts { grad: units.gradient(cfg.n_grad), ..Default::default() };
        let ok = match sgd.step(model, &batch, cfg)? {
            SgdStep::Moved => true,
            SgdStep::Reverted => {
                sgd.backoff();
                false
            }
        };
        if ok {
            moved_steps += 1;
        }
        push(&mut trace, &mut counts, charges, monitor_elbo(&sgd.omega), ok);
    };

    Ok(RunResult {
        model: model.name().to_string(),
        method: "advi".into(),
        seed: cfg.seed,
        accept_rate: if trace.is_empty() { f64::NAN } else { moved_steps as f64 / trace.len() as f64 },
        trace,
        final_elbo: final_elbo(model, &sgd.omega, cfg.n_grad, cfg.seed),
        final_params: sgd.omega.to_f64(),
        counts,
        diverged: false,
        termination,
    })
}

/// [`advi_run`] from `mu = 0, rho = 0`.
pub fn advi_optimize<T: Scalar>(model: &dyn ModelSpec<T>, cfg: &AdviConfig) -> Result<RunResult> {
    advi_run(model, cfg, VariationalParams::standard(model.latent_dim()))
}
