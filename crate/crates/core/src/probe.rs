//! Monte-Carlo checks of the per-iteration guarantees at a frozen state.
//!
//! With `phi = L - alpha delta^2`, one iteration should raise `phi` by at
//! least `lambda delta^2` in expectation once the proposal is fixed, steps
//! whose true improvement is below `tau2 delta^2` should be accepted rarely,
//! and for radii below a threshold built from the exact gradient norm, the
//! whole iteration should accept with probability at least `zeta0 zeta1`.

use serde::{Deserialize, Serialize};

use crate::assessment::{assess, Proposal};
use crate::error::{Error, Result};
use crate::linalg::{norm, power_iteration_norm};
use crate::optimizer::{OptimizerConfig, Streams, TrustVi};
use crate::rng::{mix64, streams, Stream};
use crate::scalar::Scalar;
use crate::vi::{BaseBatch, StochasticHessian, VariationalParams};
use crate::zoo::ZooModel;

/// State the iteration is replayed from.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenState<T> {
    pub omega: VariationalParams<T>,
    pub delta: T,
    pub n_grad: usize,
}

/// What is held fixed across replays.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeMode<T> {
    /// Gradient, Hessian and assessment all redrawn.
    FullIteration,
    /// Only the assessment is redrawn.
    FixedProposal { s: Vec<T>, m_prime: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub replications: usize,
    pub delta: f64,
    pub lambda_delta2: f64,
    pub delta_phi_mean: f64,
    pub delta_phi_se: f64,
    /// `E[delta phi] >= lambda delta^2 - 3 SE`.
    pub phi_bound_holds: bool,
    pub accept_freq: f64,
    pub accept_se: f64,
    pub true_grad_norm: f64,
    pub lipschitz: f64,
    pub kappa_h: f64,
    /// Radius threshold without its `m'` term.
    pub delta_minus_static: f64,
    /// Share of replays with `delta <= min(static, sqrt(eta m' / lambda))`.
    pub frac_within_delta_minus: f64,
    pub accept_bound: f64,
    /// Present when `delta <= delta_minus_static`.
    pub accept_bound_holds: Option<bool>,
    /// Exact improvement of a fixed proposal.
    pub true_improvement: Option<f64>,
    /// `tau1 delta^2 / (tau2 delta^2 - L')` when `L' < tau2 delta^2`.
    pub bad_step_bound: Option<f64>,
    pub bad_step_bound_holds: Option<bool>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `min(delta_bar, nu2 nu3 |grad L| / (nu2 L + nu2 eta kappa_h + 8 kappa_h))`.
pub fn delta_minus_static(cfg: &OptimizerConfig, true_grad_norm: f64, lipschitz: f64, kappa_h: f64) -> f64 {
    let denom = cfg.nu2 * lipschitz + cfg.nu2 * cfg.eta * kappa_h + 8.0 * kappa_h;
    let bar = cfg.delta_minus.unwrap_or(f64::INFINITY);
    let term = if denom > 0.0 { cfg.nu2 * cfg.nu3 * true_grad_norm / denom } else { f64::INFINITY };
    bar.min(term)
}

/// Radius threshold for one realized `m'`.
pub fn delta_k_minus(cfg: &OptimizerConfig, m_prime: f64, true_grad_norm: f64, lipschitz: f64, kappa_h: f64) -> f64 {
    delta_minus_static(cfg, true_grad_norm, lipschitz, kappa_h).min((cfg.eta * m_prime.max(0.0) / cfg.lambda).sqrt())
}

/// Largest stochastic-Hessian norm seen over `batches` fresh batches.
pub fn estimate_kappa_h<T: Scalar>(zoo: &ZooModel<T>, omega: &VariationalParams<T>, n_hvp: usize, batches: usize, seed: u64) -> Result<f64> {
    let d = zoo.latent_dim();
    let mut stream = Stream::new(seed, streams::HESSIAN);
    let mut start_stream = Stream::new(seed, streams::INIT);
    let mut best = 0.0f64;
    for _ in 0..batches {
        let hess = StochasticHessian::new(zoo.model(), omega, BaseBatch::generate(n_hvp, d, &mut stream))?;
        let mut v = vec![T::zero(); 2 * d];
        start_stream.fill_standard_normal(&mut v);
        best = best.max(power_iteration_norm(&v, 50, |x| hess.apply(x))?.as_f64());
    }
    Ok(best)
}

/// Replay one iteration from `state` `replications` times with independent
/// randomness and compare against the per-iteration bounds.
pub fn theory_probe<T: Scalar>(
    zoo: &ZooModel<T>,
    cfg: &OptimizerConfig,
    state: &FrozenState<T>,
    mode: &ProbeMode<T>,
    replications: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let analytic = zoo
        .analytic
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("model `{}` has no analytic ELBO gradient", zoo.name())))?;
    if replications == 0 {
        return Err(Error::Contract("need at least one replication".into()));
    }
    let opt = TrustVi::new(zoo.model(), cfg.clone())?;
    let ap = cfg.acceptance();
    let assess_cfg = cfg.assess_config();
    let delta = state.delta.as_f64();
    let alpha = cfg.alpha;
    let l0 = analytic.elbo(&state.omega).as_f64();
    let true_grad_norm = norm(&analytic.elbo_gradient(&state.omega)).as_f64();
    let lipschitz = analytic.gradient_lipschitz(&state.omega, state.delta).as_f64();
    let kappa_h = match cfg.kappa_h {
        Some(k) => k,
        None => estimate_kappa_h(zoo, &state.omega, cfg.n_hvp, 8, seed ^ 0x5eed)?,
    };
    let static_minus = delta_minus_static(cfg, true_grad_norm, lipschitz, kappa_h);

    let mut dphi = Vec::with_capacity(replications);
    let mut acc = Vec::with_capacity(replications);
    let mut within = 0usize;
    let gamma = cfg.gamma;
    let grow = (gamma * delta).min(cfg.delta_max);
    let shrink = delta / gamma;

    let mut true_improvement = None;
    for r in 0..replications {
        let rs = mix64(seed ^ mix64(r as u64 + 1));
        let (accepted, omega_next, m_prime) = match mode {
            ProbeMode::FullIteration => {
                let mut st = opt.initial_state(state.omega.clone())?;
                st.delta = state.delta;
                st.n_grad = state.n_grad;
                st.streams = Streams::new(rs);
                let det = opt.step(&mut st)?;
                (det.accepted, st.omega, det.step.model_improvement.as_f64())
            }
            ProbeMode::FixedProposal { s, m_prime } => {
                let p = Proposal {
                    s,
                    m_prime: *m_prime,
                    delta: state.delta,
                    grad_norm: T::lit(true_grad_norm),
                    grad_batch: state.n_grad,
                };
                let mut stream = Stream::new(rs, streams::ASSESS);
                let a = assess(zoo.model(), &state.omega, &p, &ap, &assess_cfg, None, &mut stream)?;
                let next = if a.accepted { state.omega.step(s)? } else { state.omega.clone() };
                if true_improvement.is_none() {
                    true_improvement = Some(analytic.elbo(&state.omega.step(s)?).as_f64() - l0);
                }
                (a.accepted, next, m_prime.as_f64())
            }
        };
        let dl = if accepted { analytic.elbo(&omega_next).as_f64() - l0 } else { 0.0 };
        let d_next = if accepted { grow } else { shrink };
        dphi.push(dl - alpha * (d_next * d_next - delta * delta));
        acc.push(if accepted { 1.0 } else { 0.0 });
        if delta <= delta_k_minus(cfg, m_prime, true_grad_norm, lipschitz, kappa_h) {
            within += 1;
        }
    }

    let (delta_phi_mean, delta_phi_se) = mean_se(&dphi);
    let (accept_freq, accept_se) = mean_se(&acc);
    let lambda_delta2 = cfg.lambda * delta * delta;
    let accept_bound = cfg.zeta0 * cfg.zeta1;
    let (tau1, tau2) = (ap.tau1(), ap.tau2());
    let bad_step_bound = true_improvement
        .filter(|&l| l < tau2 * delta * delta)
        .map(|l| tau1 * delta * delta / (tau2 * delta * delta - l));
    Ok(ProbeReport {
        replications,
        delta,
        lambda_delta2,
        delta_phi_mean,
        delta_phi_se,
        phi_bound_holds: delta_phi_mean >= lambda_delta2 - 3.0 * delta_phi_se,
        accept_freq,
        accept_se,
        true_grad_norm,
        lipschitz,
        kappa_h,
        delta_minus_static: static_minus,
        frac_within_delta_minus: within as f64 / replications as f64,
        accept_bound,
        accept_bound_holds: (delta <= static_minus).then_some(accept_freq >= accept_bound - 3.0 * accept_se),
        true_improvement,
        bad_step_bound,
        bad_step_bound_holds: bad_step_bound.map(|b| accept_freq <= b + 3.0 * accept_se),
    })
}
