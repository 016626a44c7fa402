//! Step assessment: matched-pairs improvement estimates, the Hoeffding-driven
//! sample size, and the accept/reject rule `l' >= eta m' >= lambda delta^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::vi::{log_density_samples, BaseBatch, ModelSpec, VariationalParams};

/// Constants of the acceptance rule and of both sample-size inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceParams {
    pub eta: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub nu1: f64,
    pub zeta0: f64,
    pub zeta1: f64,
}

impl Default for AcceptanceParams {
    fn default() -> Self {
        let (gamma, lambda): (f64, f64) = (2.0, 1e-2);
        Self {
            eta: 0.4,
            lambda,
            alpha: 10.0 * lambda / (1.0 - gamma.powi(-2)),
            gamma,
            nu1: 0.1,
            zeta0: 0.75,
            zeta1: 0.75,
        }
    }
}

impl AcceptanceParams {
    /// `alpha (1 - gamma^-2) - lambda`
    pub fn tau1(&self) -> f64 {
        self.alpha * (1.0 - self.gamma.powi(-2)) - self.lambda
    }

    /// `alpha (gamma^2 - gamma^-2)`
    pub fn tau2(&self) -> f64 {
        self.alpha * (self.gamma.powi(2) - self.gamma.powi(-2))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.eta > 0.0 && self.eta <= 0.5) {
            return bad(format!("eta = {} outside (0, 1/2]", self.eta));
        }
        if self.eta == 0.5 {
            log::warn!("eta = 1/2 sits on the closed end of its range");
        }
        if !(self.gamma > 1.0) {
            return bad(format!("gamma = {} must exceed 1", self.gamma));
        }
        if !(self.lambda > 0.0) {
            return bad(format!("lambda = {} must be positive", self.lambda));
        }
        let alpha_min = self.lambda / (1.0 - self.gamma.powi(-2));
        if !(self.alpha > alpha_min) {
            return bad(format!("alpha = {} must exceed lambda / (1 - gamma^-2) = {alpha_min}", self.alpha));
        }
        if !(self.nu1 > 0.0 && self.nu1 < 1.0 - self.eta) {
            return bad(format!("nu1 = {} outside (0, 1 - eta)", self.nu1));
        }
        if !(self.zeta0 > 0.5 && self.zeta0 < 1.0) {
            return bad(format!("zeta0 = {} outside (1/2, 1)", self.zeta0));
        }
        if !(self.zeta1 > 1.0 / (2.0 * self.zeta0) && self.zeta1 < 1.0) {
            return bad(format!("zeta1 = {} outside (1/(2 zeta0), 1)", self.zeta1));
        }
        Ok(())
    }

    /// Whether `eta m' >= lambda delta^2`.
    pub fn gate<T: Scalar>(&self, m_prime: T, delta: T) -> bool {
        let (m, d) = (m_prime.as_f64(), delta.as_f64());
        self.eta * m >= self.lambda * d * d
    }
}

/// Per-draw matched-pairs improvements `L(omega + s; e_i) - L(omega; e_i)`.
///
/// The batch must be fresh: reusing the draws behind the gradient or the
/// Hessian biases the assessment.
pub fn paired_improvement_samples<T: Scalar>(
    model: &dyn ModelSpec<T>,
    omega: &VariationalParams<T>,
    s: &[T],
    batch: &BaseBatch<T>,
) -> Result<Vec<T>> {
    let moved = omega.step(s)?;
    if !moved.is_finite() {
        return Err(Error::overflow(&moved.to_flat()));
    }
    let after = log_density_samples(model, &moved, batch)?;
    let before = log_density_samples(model, omega, batch)?;
    let dh = moved.entropy() - omega.entropy();
    let out: Vec<T> = after.iter().zip(&before).map(|(&a, &b)| a - b + dh).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::overflow(&moved.to_flat()));
    }
    Ok(out)
}

/// Sample standard deviation (divisor `N - 1`).
pub fn estimate_sigma<T: Scalar>(samples: &[T]) -> Result<T> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Contract(format!("need at least 2 samples to estimate sigma, got {n}")));
    }
    let nf = T::from_usize_lossy(n);
    let mean = samples.iter().copied().sum::<T>() / nf;
    let ss: T = samples.iter().map(|&x| (x - mean) * (x - mean)).sum();
    Ok((ss / T::from_usize_lossy(n - 1)).sqrt())
}

fn ceil_count(x: f64) -> usize {
    if !x.is_finite() || x >= usize::MAX as f64 {
        usize::MAX
    } else if x <= 0.0 {
        0
    } else {
        x.ceil() as usize
    }
}

/// Right-hand side of the bad-step inequality at `y`, clamped at 0.
pub fn bad_step_bound(sigma: f64, eta_m: f64, tau1_d2: f64, tau2_d2: f64, y: f64) -> f64 {
    let ratio = (tau2_d2 + y) / tau1_d2;
    if !(ratio > 1.0) {
        return 0.0;
    }
    2.0 * sigma * sigma / (eta_m + y).powi(2) * ratio.ln()
}

/// Smallest `N` with
/// `N >= 2 sigma^2 / (eta m' + y)^2 * log((tau2 delta^2 + y) / (tau1 delta^2))`
/// for every `y > max(-eta m' / 2, -tau2 delta^2)`.
///
/// The bound is unimodal in `y`: its derivative has the sign of
/// `(a + y)/(b + y) - 2 log((b + y)/c)`, which is strictly decreasing, so the
/// supremum sits at the root of that expression (found by bisection) or at
/// the left end of the range.
pub fn required_sample_size<T: Scalar>(sigma: T, m_prime: T, delta: T, ap: &AcceptanceParams) -> Result<usize> {
    let (sigma, m, delta) = (sigma.as_f64(), m_prime.as_f64(), delta.as_f64());
    let tau1 = ap.tau1();
    if !(tau1 > 0.0) {
        return Err(Error::InvalidConfig(format!("tau1 = {tau1} must be positive; increase alpha")));
    }
    if sigma == 0.0 {
        return Ok(0);
    }
    let a = ap.eta * m;
    if !(a > 0.0) || !(delta > 0.0) {
        return Err(Error::Contract("sample-size rule needs eta m' > 0 and delta > 0".into()));
    }
    let b = ap.tau2() * delta * delta;
    let cc = tau1 * delta * delta;
    let f = |y: f64| bad_step_bound(sigma, a, cc, b, y);
    let slope_sign = |y: f64| (a + y) / (b + y) - 2.0 * ((b + y) / cc).ln();

    let y_lo = (-a / 2.0).max(-b);
    let left_is_half = -a / 2.0 >= -b;
    if left_is_half && b + y_lo > 0.0 && slope_sign(y_lo) <= 0.0 {
        return Ok(ceil_count(f(y_lo)));
    }
    let mut lo = y_lo;
    let mut hi = y_lo.abs().max(1.0) + cc + b;
    while slope_sign(hi) > 0.0 {
        hi = 2.0 * hi + 1.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope_sign(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sup = f(lo).max(f(hi)).max(f(0.5 * (lo + hi)));
    Ok(ceil_count(sup))
}

/// Smallest `N` with `N >= -2 sigma^2 log(1 - zeta1) / (nu1^2 g^2 delta^2)`,
/// where `g` stands in for the unobservable true gradient norm.
pub fn required_sample_size_small_radius<T: Scalar>(sigma: T, grad_norm_proxy: T, delta: T, nu1: f64, zeta1: f64) -> Result<usize> {
    let (sigma, g, delta) = (sigma.as_f64(), grad_norm_proxy.as_f64(), delta.as_f64());
    if !(g > 0.0) {
        return Err(Error::InvalidConfig("small-radius rule needs a positive gradient norm".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Contract("trust radius must be positive".into()));
    }
    if sigma == 0.0 {
        return Ok(0);
    }
    Ok(ceil_count(-2.0 * sigma * sigma * (1.0 - zeta1).ln() / (nu1 * nu1 * g * g * delta * delta)))
}

/// Batch sizing for the assessment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssessConfig {
    /// Smallest assessment batch, also the size charged as one oracle call.
    pub n_min: usize,
    pub n_cap: usize,
    /// Total draws allowed across redraws, e.g. what the budget has left.
    pub draw_limit: Option<usize>,
    /// Most draws a `sigma_prior` guess may ask for up front. Larger needs
    /// are reached by redrawing once the realized `sigma_hat` confirms them.
    pub prior_cap: usize,
    /// Reject without redrawing when the mean improvement is more than this
    /// many standard errors below `eta m'`. Only acceptance needs the full
    /// sample size; a rejection is always safe.
    pub early_reject_z: Option<f64>,
    /// The small-radius rule applies when `delta <= delta_minus`.
    pub delta_minus: f64,
}

impl Default for AssessConfig {
    fn default() -> Self {
        Self { n_min: 128, n_cap: 1 << 20, draw_limit: None, prior_cap: 1024, early_reject_z: Some(3.0), delta_minus: f64::INFINITY }
    }
}

/// Outcome of assessing one proposed step.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentResult<T> {
    /// Mean paired improvement; `NaN` when the gate failed, `-inf` on
    /// overflow at the proposed point.
    pub ell_prime: T,
    pub sigma_hat: T,
    /// Size of the batch the decision was made on.
    pub n: usize,
    /// Paired draws consumed over every redraw.
    pub n_drawn: usize,
    /// Sample size the final sigma estimate calls for.
    pub n_required: usize,
    pub accepted: bool,
    pub gate_passed: bool,
    pub cap_exceeded: bool,
    pub overflow: bool,
    pub oracle_calls: u64,
    /// `sigma_hat / |s|`, to seed the next iteration.
    pub next_sigma_prior: Option<T>,
    /// The batch exceeded the gradient batch and was more than twice as
    /// large as needed.
    pub halve_hint: bool,
}

impl<T: Scalar> AssessmentResult<T> {
    fn gate_failed() -> Self {
        Self {
            ell_prime: T::nan(),
            sigma_hat: T::zero(),
            n: 0,
            n_drawn: 0,
            n_required: 0,
            accepted: false,
            gate_passed: false,
            cap_exceeded: false,
            overflow: false,
            oracle_calls: 0,
            next_sigma_prior: None,
            halve_hint: false,
        }
    }
}

/// Inputs describing the proposal under assessment.
#[derive(Debug, Clone, Copy)]
pub struct Proposal<'a, T> {
    pub s: &'a [T],
    pub m_prime: T,
    pub delta: T,
    /// `|g_k|`, the plug-in for the true gradient norm.
    pub grad_norm: T,
    /// Current gradient batch size, for the halving hint.
    pub grad_batch: usize,
}

fn required_both<T: Scalar>(sigma: T, p: &Proposal<'_, T>, ap: &AcceptanceParams, cfg: &AssessConfig) -> Result<usize> {
    let mut n = required_sample_size(sigma, p.m_prime, p.delta, ap)?;
    if p.delta.as_f64() <= cfg.delta_minus && p.grad_norm > T::zero() {
        n = n.max(required_sample_size_small_radius(sigma, p.grad_norm, p.delta, ap.nu1, ap.zeta1)?);
    }
    Ok(n)
}

/// Decide whether to accept a proposed step.
///
/// Fails the gate without sampling when `eta m' < lambda delta^2`. Otherwise
/// draws a batch sized from `sigma_prior` (per unit step length, capped at
/// `prior_cap`), re-checks the requirement with the realized `sigma_hat` and
/// redraws a fresh batch of at least twice the size, or the full requirement
/// if larger, until it holds. Running into `n_cap` or `draw_limit` rejects.
pub fn assess<T: Scalar>(
    model: &dyn ModelSpec<T>,
    omega: &VariationalParams<T>,
    proposal: &Proposal<'_, T>,
    ap: &AcceptanceParams,
    cfg: &AssessConfig,
    sigma_prior: Option<T>,
    stream: &mut Stream,
) -> Result<AssessmentResult<T>> {
    if proposal.m_prime < T::zero() {
        return Err(Error::Contract("model improvement must be nonnegative".into()));
    }
    if !ap.gate(proposal.m_prime, proposal.delta) {
        return Ok(AssessmentResult::gate_failed());
    }
    let step_norm = norm(proposal.s);
    let d = model.latent_dim();
    let eta_m = T::lit(ap.eta) * proposal.m_prime;

    let guess = match sigma_prior {
        Some(u) if step_norm > T::zero() => required_both(u * step_norm, proposal, ap, cfg)?.min(cfg.prior_cap),
        _ => 0,
    };
    let mut n = guess.max(cfg.n_min).min(cfg.n_cap).max(2);
    if let Some(limit) = cfg.draw_limit {
        if limit < 2 {
            let mut r = AssessmentResult::gate_failed();
            r.gate_passed = true;
            r.cap_exceeded = true;
            return Ok(r);
        }
        n = n.min(limit);
    }
    let mut drawn = 0usize;
    let charge = |drawn: usize| drawn.div_ceil(cfg.n_min.max(1)) as u64;

    loop {
        let batch = BaseBatch::generate(n, d, stream);
        drawn += n;
        let samples = match paired_improvement_samples(model, omega, proposal.s, &batch) {
            Ok(s) => s,
            Err(e) if e.is_overflow() => {
                return Ok(AssessmentResult {
                    ell_prime: T::neg_infinity(),
                    sigma_hat: T::infinity(),
                    n,
                    n_drawn: drawn,
                    n_required: 0,
                    accepted: false,
                    gate_passed: true,
                    cap_exceeded: false,
                    overflow: true,
                    oracle_calls: charge(drawn),
                    next_sigma_prior: None,
                    halve_hint: false,
                });
            }
            Err(e) => return Err(e),
        };
        let sigma_hat = estimate_sigma(&samples)?;
        let ell = samples.iter().copied().sum::<T>() / T::from_usize_lossy(n);
        let need = required_both(sigma_hat, proposal, ap, cfg)?;
        let room = cfg.draw_limit.map_or(usize::MAX, |l| l.saturating_sub(drawn));
        let next = (2 * n).max(need).min(cfg.n_cap).min(room);
        let cap_exceeded = need > n && (n >= cfg.n_cap || next < need.min(cfg.n_cap) || next < 2);
        let hopeless = cfg.early_reject_z.is_some_and(|z| {
            ell + T::lit(z) * sigma_hat / T::from_usize_lossy(n).sqrt() < eta_m
        });
        if need <= n || cap_exceeded || hopeless {
            return Ok(AssessmentResult {
                ell_prime: ell,
                sigma_hat,
                n,
                n_drawn: drawn,
                n_required: need,
                accepted: need <= n && ell >= eta_m,
                gate_passed: true,
                cap_exceeded,
                overflow: false,
                oracle_calls: charge(drawn),
                next_sigma_prior: (step_norm > T::zero()).then(|| sigma_hat / step_norm),
                halve_hint: n > proposal.grad_batch && n > 2 * need,
            });
        }
        n = next;
    }
}
