//! The trust-region loop: propose with truncated CG, assess with matched
//! pairs, then move the iterate and radius.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assessment::{assess, AcceptanceParams, AssessConfig, AssessmentResult, Proposal};
use crate::error::{Error, Result};
use crate::rng::{streams, Stream};
use crate::scalar::Scalar;
use crate::subproblem::{solve_tr_krylov, CountingOperator, KrylovOptions, QuadraticModel, Step};
use crate::trace::{OracleCounts, OracleUnits, RunResult, Termination, TraceRecord};
use crate::vi::{
    adapt_gradient_batch, elbo_estimate, jackknife_grad_norm_sd, stochastic_gradient, BaseBatch, BatchAdaptation,
    ModelSpec, StochasticHessian, VariationalParams,
};

/// Optimizer settings. Every field has a default, so a plan file only needs
/// the ones it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub zeta0: f64,
    pub zeta1: f64,
    /// Bound on the norm of the model Hessians. Only used by the probe;
    /// estimated there when absent.
    pub kappa_h: Option<f64>,
    /// Radius below which the small-radius sample-size rule applies.
    /// Absent means always.
    pub delta_minus: Option<f64>,
    pub delta_max: f64,
    pub delta0: f64,
    pub n_grad: usize,
    pub n_grad_max: usize,
    pub n_hvp: usize,
    pub n_assess_min: usize,
    pub n_assess_cap: usize,
    /// See [`AssessConfig::early_reject_z`]; `None` always redraws up to
    /// the required size.
    pub early_reject_z: Option<f64>,
    /// Sub-batches for the jackknife.
    pub subbatches: usize,
    /// Gradient batch rule; absent means [`BatchAdaptation::for_dim`].
    pub batch_adaptation: Option<BatchAdaptation>,
    pub krylov: KrylovOptions,
    /// Iterations a Hessian batch may serve while the iterate is unchanged.
    pub hessian_reuse: u32,
    pub delta_stop: f64,
    pub stop_patience: usize,
    /// Draws in the fixed, uncharged batch behind the traced ELBO.
    pub monitor_batch: usize,
    pub max_iterations: Option<u64>,
    pub budget: u64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let ap = AcceptanceParams::default();
        Self {
            eta: ap.eta,
            gamma: ap.gamma,
            lambda: ap.lambda,
            alpha: ap.alpha,
            nu1: ap.nu1,
            nu2: 0.5,
            nu3: 0.25,
            zeta0: ap.zeta0,
            zeta1: ap.zeta1,
            kappa_h: None,
            delta_minus: None,
            delta_max: 100.0,
            delta0: 1.0,
            n_grad: 256,
            n_grad_max: 1 << 16,
            n_hvp: 85,
            n_assess_min: 128,
            n_assess_cap: 1 << 20,
            early_reject_z: Some(3.0),
            subbatches: 16,
            batch_adaptation: None,
            krylov: KrylovOptions::default(),
            hessian_reuse: 2,
            delta_stop: 1e-6,
            stop_patience: 10,
            monitor_batch: 256,
            max_iterations: None,
            budget: 10_000,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn acceptance(&self) -> AcceptanceParams {
        AcceptanceParams {
            eta: self.eta,
            lambda: self.lambda,
            alpha: self.alpha,
            gamma: self.gamma,
            nu1: self.nu1,
            zeta0: self.zeta0,
            zeta1: self.zeta1,
        }
    }

    pub fn assess_config(&self) -> AssessConfig {
        AssessConfig {
            n_min: self.n_assess_min,
            n_cap: self.n_assess_cap,
            draw_limit: None,
            prior_cap: 8 * self.n_assess_min,
            early_reject_z: self.early_reject_z,
            delta_minus: self.delta_minus.unwrap_or(f64::INFINITY),
        }
    }

    pub fn units(&self) -> OracleUnits {
        OracleUnits::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.acceptance().validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.nu2 > 0.0 && self.nu2 < 1.0) {
            return bad(format!("nu2 = {} outside (0, 1)", self.nu2));
        }
        let nu3_max = 1.0 - self.eta - self.nu1;
        if !(self.nu3 > 0.0 && self.nu3 < nu3_max) {
            return bad(format!("nu3 = {} outside (0, {nu3_max})", self.nu3));
        }
        if let Some(k) = self.kappa_h {
            if !(k >= 0.0) {
                return bad(format!("kappa_h = {k} must be nonnegative"));
            }
        }
        if let Some(dm) = self.delta_minus {
            if !(dm > 0.0) {
                return bad(format!("delta_minus = {dm} must be positive"));
            }
        }
        if !(self.delta_max > 0.0 && self.delta_max.is_finite()) {
            return bad(format!("delta_max = {} must be positive and finite", self.delta_max));
        }
        if !(self.delta0 > 0.0 && self.delta0 <= self.delta_max) {
            return bad(format!("delta0 = {} outside (0, delta_max]", self.delta0));
        }
        if self.n_grad < 2 || self.n_hvp == 0 || self.n_assess_min < 2 {
            return bad("batch sizes too small".into());
        }
        if self.n_grad > self.n_grad_max || self.n_assess_min > self.n_assess_cap {
            return bad("batch size exceeds its cap".into());
        }
        let n_min = self.batch_adaptation.map_or(64, |b| b.n_min);
        if self.subbatches < 2 || self.subbatches > n_min {
            return bad(format!("subbatches = {} must lie in [2, n_min]", self.subbatches));
        }
        if self.monitor_batch == 0 {
            return bad("monitor_batch must be positive".into());
        }
        Ok(())
    }
}

/// Hessian batch kept across rejected iterations.
#[derive(Debug, Clone)]
pub struct HessianCache<T> {
    pub batch: BaseBatch<T>,
    /// Iterations this batch has served.
    pub uses: u32,
}

/// Random streams owned by one optimizer run.
#[derive(Debug, Clone)]
pub struct Streams {
    pub gradient: Stream,
    pub hessian: Stream,
    pub assess: Stream,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            gradient: Stream::new(seed, streams::GRADIENT),
            hessian: Stream::new(seed, streams::HESSIAN),
            assess: Stream::new(seed, streams::ASSESS),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub omega: VariationalParams<T>,
    pub delta: T,
    pub k: u64,
    pub n_grad: usize,
    /// Previous `sigma_hat / |s|`.
    pub sigma_prior: Option<T>,
    pub hessian: Option<HessianCache<T>>,
    pub last_accepted: bool,
    pub counts: OracleCounts,
    pub accepted_steps: u64,
    /// Consecutive iterations with `delta < delta_stop`.
    pub small_radius_run: usize,
    pub elbo_est: T,
    pub streams: Streams,
}

/// Everything one iteration decided, beyond its trace row.
#[derive(Debug, Clone)]
pub struct IterationDetail<T> {
    pub record: TraceRecord,
    pub gradient: Vec<T>,
    pub step: Step<T>,
    pub assessment: Option<AssessmentResult<T>>,
    pub accepted: bool,
    pub delta_before: T,
    pub delta_after: T,
    pub reused_hessian: bool,
}

/// A configured optimizer bound to one model.
pub struct TrustVi<'m, T: Scalar> {
    model: &'m dyn ModelSpec<T>,
    config: OptimizerConfig,
    ap: AcceptanceParams,
    assess_cfg: AssessConfig,
    units: OracleUnits,
    monitor: BaseBatch<T>,
    batch_rule: BatchAdaptation,
}

impl<'m, T: Scalar> TrustVi<'m, T> {
    pub fn new(model: &'m dyn ModelSpec<T>, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        let monitor = BaseBatch::seeded(config.monitor_batch, model.latent_dim(), config.seed, streams::MONITOR);
        Ok(Self {
            model,
            ap: config.acceptance(),
            assess_cfg: config.assess_config(),
            units: config.units(),
            batch_rule: config.batch_adaptation.unwrap_or_else(|| BatchAdaptation::for_dim(2 * model.latent_dim())),
            config,
            monitor,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn model(&self) -> &'m dyn ModelSpec<T> {
        self.model
    }

    /// ELBO on the fixed monitor batch; not charged.
    pub fn monitor_elbo(&self, omega: &VariationalParams<T>) -> Result<T> {
        elbo_estimate(self.model, omega, &self.monitor)
    }

    pub fn initial_state(&self, omega0: VariationalParams<T>) -> Result<OptimizerState<T>> {
        if omega0.latent_dim() != self.model.latent_dim() {
            return Err(Error::DimensionMismatch { expected: self.model.latent_dim(), found: omega0.latent_dim() });
        }
        let elbo_est = self.monitor_elbo(&omega0)?;
        Ok(OptimizerState {
            omega: omega0,
            delta: T::lit(self.config.delta0),
            k: 0,
            n_grad: self.config.n_grad,
            sigma_prior: None,
            hessian: None,
            last_accepted: true,
            counts: OracleCounts::default(),
            accepted_steps: 0,
            small_radius_run: 0,
            elbo_est,
            streams: Streams::new(self.config.seed),
        })
    }

    /// One iteration. Overflow while forming the proposal or assessing it
    /// rejects the step; overflow of the gradient at the current iterate is
    /// returned as an error.
    pub fn step(&self, state: &mut OptimizerState<T>) -> Result<IterationDetail<T>> {
        let d = self.model.latent_dim();
        let mut charges = OracleCounts::default();

        let gbatch = BaseBatch::generate(state.n_grad, d, &mut state.streams.gradient);
        charges.grad = self.units.gradient(state.n_grad);
        let gs = stochastic_gradient(self.model, &state.omega, &gbatch, self.config.subbatches)?;
        let g_norm = gs.norm();
        let sd = jackknife_grad_norm_sd(&gs)?;
        let next_n_grad = adapt_gradient_batch(state.n_grad, g_norm, sd, &self.batch_rule)
            .min(self.config.n_grad_max);

        let reuse = !state.last_accepted
            && state.hessian.as_ref().is_some_and(|h| h.uses < self.config.hessian_reuse);
        if reuse {
            if let Some(h) = state.hessian.as_mut() {
                h.uses += 1;
            }
        } else {
            let batch = BaseBatch::generate(self.config.n_hvp, d, &mut state.streams.hessian);
            state.hessian = Some(HessianCache { batch, uses: 1 });
        }
        let hbatch = state.hessian.as_ref().map(|h| h.batch.clone()).ok_or_else(|| {
            Error::Contract("hessian batch missing".into())
        })?;
        let hbatch_len = hbatch.len();

        let delta_before = state.delta;
        let proposal = StochasticHessian::new(self.model, &state.omega, hbatch).and_then(|hess| {
            let counting = CountingOperator::new(&hess);
            let qm = QuadraticModel::new(gs.mean_gradient.clone(), &counting, state.delta)?;
            let step = solve_tr_krylov(&qm, &self.config.krylov);
            let used = counting.count();
            step.map(|s| (s, used)).map_err(|e| (e, used)).or_else(|(e, used)| {
                if e.is_overflow() {
                    Ok((overflow_step(2 * d, used), used))
                } else {
                    Err(e)
                }
            })
        });
        let (step, products) = match proposal {
            Ok(p) => p,
            Err(e) if e.is_overflow() => (overflow_step(2 * d, 0), 0),
            Err(e) => return Err(e),
        };
        charges.hvp = self.units.hvp(hbatch_len, products);

        let overflowed = !step.model_improvement.is_finite();
        let assessment = if overflowed {
            None
        } else {
            let p = Proposal {
                s: &step.s,
                m_prime: step.model_improvement,
                delta: state.delta,
                grad_norm: g_norm,
                grad_batch: state.n_grad,
            };
            // Never draw past the budget; the cap then rejects the step.
            let spent = state.counts.total() + charges.total();
            let left = self.config.budget.saturating_sub(spent) as usize;
            let mut acfg = self.assess_cfg;
            acfg.draw_limit = Some(left.saturating_mul(self.units.assess));
            Some(assess(
                self.model,
                &state.omega,
                &p,
                &self.ap,
                &acfg,
                state.sigma_prior,
                &mut state.streams.assess,
            )?)
        };
        if let Some(a) = &assessment {
            charges.assess = a.oracle_calls;
            if let Some(sp) = a.next_sigma_prior {
                state.sigma_prior = Some(sp);
            }
        }
        let accepted = assessment.as_ref().is_some_and(|a| a.accepted);

        let gamma = T::lit(self.config.gamma);
        if accepted {
            state.omega = state.omega.step(&step.s)?;
            state.delta = (gamma * state.delta).min(T::lit(self.config.delta_max));
            state.elbo_est = self.monitor_elbo(&state.omega).unwrap_or(T::neg_infinity());
            state.accepted_steps += 1;
        } else {
            state.delta = state.delta / gamma;
        }
        state.last_accepted = accepted;
        state.n_grad = next_n_grad;
        state.counts.add(charges);
        state.small_radius_run =
            if state.delta.as_f64() < self.config.delta_stop { state.small_radius_run + 1 } else { 0 };

        let (ell, n_assess, sigma_hat) = match &assessment {
            Some(a) => (a.ell_prime.as_f64(), a.n as u64, a.sigma_hat.as_f64()),
            None => (f64::NEG_INFINITY, 0, f64::NAN),
        };
        let record = TraceRecord {
            iter: state.k,
            cum_oracle_calls: state.counts.total(),
            elbo_est: state.elbo_est.as_f64(),
            delta: delta_before.as_f64(),
            m_prime: step.model_improvement.as_f64(),
            ell_prime: ell,
            n_assess,
            sigma_hat,
            accepted,
            grad_calls: charges.grad,
            hvp_calls: charges.hvp,
            assess_calls: charges.assess,
            wall_time: 0.0,
        };
        state.k += 1;
        Ok(IterationDetail {
            record,
            gradient: gs.mean_gradient,
            step,
            assessment,
            accepted,
            delta_before,
            delta_after: state.delta,
            reused_hessian: reuse,
        })
    }

    fn should_stop(&self, state: &OptimizerState<T>) -> Option<Termination> {
        if state.counts.total() >= self.config.budget {
            Some(Termination::Budget)
        } else if state.small_radius_run >= self.config.stop_patience {
            Some(Termination::RadiusCollapse)
        } else if self.config.max_iterations.is_some_and(|m| state.k >= m) {
            Some(Termination::IterationLimit)
        } else {
            None
        }
    }

    /// Run from `omega0`, calling `observe` after every iteration.
    pub fn run_with(
        &self,
        omega0: VariationalParams<T>,
        mut observe: impl FnMut(&OptimizerState<T>, &IterationDetail<T>),
    ) -> Result<RunResult> {
        let start = Instant::now();
        let mut state = self.initial_state(omega0)?;
        let mut trace = Vec::new();
        let termination = loop {
            if let Some(t) = self.should_stop(&state) {
                break t;
            }
            match self.step(&mut state) {
                Ok(mut detail) => {
                    detail.record.wall_time = start.elapsed().as_secs_f64();
                    observe(&state, &detail);
                    trace.push(detail.record);
                }
                Err(e) if e.is_overflow() => break Termination::Diverged,
                Err(e) => return Err(e),
            }
        };
        let final_elbo = final_elbo(self.model, &state.omega, self.config.n_grad, self.config.seed);
        Ok(RunResult {
            model: self.model.name().to_string(),
            method: "trustvi".into(),
            seed: self.config.seed,
            accept_rate: if trace.is_empty() { f64::NAN } else { state.accepted_steps as f64 / trace.len() as f64 },
            trace,
            final_params: state.omega.to_f64(),
            final_elbo,
            counts: state.counts,
            diverged: termination == Termination::Diverged,
            termination,
        })
    }

    pub fn run(&self, omega0: VariationalParams<T>) -> Result<RunResult> {
        self.run_with(omega0, |_, _| {})
    }
}

fn overflow_step<T: Scalar>(dim: usize, used: usize) -> Step<T> {
    Step {
        s: vec![T::zero(); dim],
        model_improvement: T::nan(),
        status: crate::subproblem::StepStatus::MaxIter,
        hvp_count: used,
    }
}

/// ELBO on a fresh, uncharged batch of `10 * n_grad` draws. `-inf` when the
/// iterate cannot be evaluated.
pub fn final_elbo<T: Scalar>(model: &dyn ModelSpec<T>, omega: &VariationalParams<T>, n_grad: usize, seed: u64) -> f64 {
    if !omega.is_finite() {
        return f64::NEG_INFINITY;
    }
    let batch = BaseBatch::seeded(10 * n_grad, model.latent_dim(), seed, streams::FINAL);
    elbo_estimate(model, omega, &batch).map_or(f64::NEG_INFINITY, |v| v.as_f64())
}

/// One iteration of the optimizer on `state`.
pub fn trustvi_step<T: Scalar>(
    optimizer: &TrustVi<'_, T>,
    state: &mut OptimizerState<T>,
) -> Result<(TraceRecord, IterationDetail<T>)> {
    let detail = optimizer.step(state)?;
    Ok((detail.record, detail))
}

/// Run the optimizer from the standard initialization `mu = 0, rho = 0`.
pub fn optimize<T: Scalar>(model: &dyn ModelSpec<T>, config: &OptimizerConfig) -> Result<RunResult> {
    TrustVi::new(model, config.clone())?.run(VariationalParams::standard(model.latent_dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;

    fn cfg(budget: u64, seed: u64) -> OptimizerConfig {
        OptimizerConfig { budget, seed, ..OptimizerConfig::default() }
    }

    #[test]
    fn default_config_is_valid() {
        OptimizerConfig::default().validate().unwrap();
        assert!(OptimizerConfig { delta0: 200.0, ..OptimizerConfig::default() }.validate().is_err());
        assert!(OptimizerConfig { nu3: 0.85, ..OptimizerConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_budget_gives_empty_trace() {
        let m = zoo::by_name::<f64>("gaussian2").unwrap();
        let r = optimize(m.model(), &cfg(0, 1)).unwrap();
        assert!(r.trace.is_empty());
        assert_eq!(r.counts.total(), 0);
        assert_eq!(r.final_params, VariationalParams::standard(2));
    }

    #[test]
    fn radius_dynamics_and_rejection_immutability() {
        let m = zoo::by_name::<f64>("gaussian8").unwrap();
        let opt = TrustVi::new(m.model(), cfg(3000, 7)).unwrap();
        let mut prev: Option<VariationalParams<f64>> = None;
        let gamma = 2.0;
        opt.run_with(VariationalParams::standard(8), |st, det| {
            let (a, b) = (det.delta_before, det.delta_after);
            if det.accepted {
                assert_eq!(b, (gamma * a).min(100.0));
            } else {
                assert_eq!(b, a / gamma);
                if let Some(p) = &prev {
                    assert_eq!(p, &st.omega);
                }
            }
            if let Some(a) = &det.assessment {
                if a.accepted {
                    assert!(a.ell_prime >= 0.1 * det.step.model_improvement);
                }
            }
            prev = Some(st.omega.clone());
        })
        .unwrap();
    }

    #[test]
    fn delta_max_binds() {
        let m = zoo::by_name::<f64>("gaussian2").unwrap();
        let c = OptimizerConfig { delta0: 0.05, delta_max: 0.05, budget: 200, seed: 3, ..OptimizerConfig::default() };
        let opt = TrustVi::new(m.model(), c).unwrap();
        opt.run_with(VariationalParams::standard(2), |_, det| {
            if det.accepted && det.delta_before == 0.05 {
                assert_eq!(det.delta_after, 0.05);
            }
        })
        .unwrap();
    }

    #[test]
    fn gaussian2_accept_rate() {
        let m = zoo::by_name::<f64>("gaussian2").unwrap();
        let mut rates: Vec<f64> = (0..9)
            .map(|seed| {
                let r = optimize(m.model(), &cfg(2000, seed)).unwrap();
                crate::trace::check_accounting(&r.trace, 0).unwrap();
                r.accept_rate
            })
            .collect();
        rates.sort_by(f64::total_cmp);
        assert!(rates[4] >= 0.15, "median accept rate {}", rates[4]);
        assert!(rates[0] > 0.0);
    }
}
