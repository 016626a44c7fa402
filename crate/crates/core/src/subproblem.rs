//! Trust-region subproblem: maximize `m(s) = g's + s'Hs/2` over `|s| <= delta`.
//!
//! [`solve_tr_krylov`] is the matrix-free workhorse (Steihaug-Toint truncated
//! CG). [`solve_tr_exact`] is an eigendecomposition-based global solver for
//! small dense problems, used as a test oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, dot, norm, DenseMatrix};
use crate::scalar::{c, Scalar};
use crate::vi::StochasticHessian;

/// A symmetric linear operator `v -> H v`.
pub trait HessianOperator<T: Scalar> {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[T]) -> Result<Vec<T>>;
}

impl<T: Scalar> HessianOperator<T> for DenseMatrix<T> {
    fn dim(&self) -> usize {
        DenseMatrix::dim(self)
    }
    fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        Ok(self.matvec(v))
    }
}

impl<T: Scalar> HessianOperator<T> for StochasticHessian<'_, T> {
    fn dim(&self) -> usize {
        StochasticHessian::dim(self)
    }
    fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        StochasticHessian::apply(self, v)
    }
}

/// Counts products so callers can charge for them.
pub struct CountingOperator<'a, T: Scalar> {
    inner: &'a dyn HessianOperator<T>,
    count: std::cell::Cell<usize>,
}

impl<'a, T: Scalar> CountingOperator<'a, T> {
    pub fn new(inner: &'a dyn HessianOperator<T>) -> Self {
        Self { inner, count: std::cell::Cell::new(0) }
    }
    pub fn count(&self) -> usize {
        self.count.get()
    }
}

impl<T: Scalar> HessianOperator<T> for CountingOperator<'_, T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        self.count.set(self.count.get() + 1);
        self.inner.apply(v)
    }
}

/// Quadratic model `m(s)` restricted to the ball of radius `delta`.
pub struct QuadraticModel<'a, T: Scalar> {
    pub g: Vec<T>,
    pub hessian: &'a dyn HessianOperator<T>,
    pub delta: T,
}

impl<'a, T: Scalar> QuadraticModel<'a, T> {
    pub fn new(g: Vec<T>, hessian: &'a dyn HessianOperator<T>, delta: T) -> Result<Self> {
        if g.len() != hessian.dim() {
            return Err(Error::DimensionMismatch { expected: hessian.dim(), found: g.len() });
        }
        if !(delta > T::zero()) {
            return Err(Error::Contract("trust radius must be positive".into()));
        }
        Ok(Self { g, hessian, delta })
    }

    /// `g's + s'Hs/2`, one operator application.
    pub fn value(&self, s: &[T]) -> Result<T> {
        let hs = self.hessian.apply(s)?;
        Ok(dot(&self.g, s) + c::<T>(0.5) * dot(s, &hs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    Interior,
    Boundary,
    NegativeCurvature,
    MaxIter,
}

/// A proposed step and its model improvement `m' = m(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<T> {
    pub s: Vec<T>,
    pub model_improvement: T,
    pub status: StepStatus,
    /// Operator applications spent producing the step.
    pub hvp_count: usize,
}

impl<T: Scalar> Step<T> {
    fn zero(dim: usize) -> Self {
        Self { s: vec![T::zero(); dim], model_improvement: T::zero(), status: StepStatus::Interior, hvp_count: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovOptions {
    /// Stop when `|residual| <= tol * |g|`.
    pub tol: f64,
    /// Iteration cap; `None` means `min(D, 250)`.
    pub max_iter: Option<usize>,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: None }
    }
}

impl KrylovOptions {
    pub fn iteration_cap(&self, dim: usize) -> usize {
        self.max_iter.unwrap_or_else(|| dim.min(250)).max(1)
    }
}

/// Largest `tau >= 0` with `|s + tau p| = delta`, for `|s| <= delta`.
fn to_boundary<T: Scalar>(s: &[T], p: &[T], delta: T) -> T {
    let pp = dot(p, p);
    let sp = dot(s, p);
    let ss = dot(s, s);
    let rad = (sp * sp + pp * (delta * delta - ss)).max(T::zero()).sqrt();
    if sp > T::zero() {
        (delta * delta - ss).max(T::zero()) / (sp + rad)
    } else {
        (rad - sp) / pp
    }
}

/// Steihaug-Toint truncated conjugate gradient.
///
/// Runs CG on `(-H) s = g` from `s = 0`. On negative curvature of `-H`, or
/// when an iterate would leave the region, the current direction is followed
/// to the boundary. The first iterate is the Cauchy point and every later one
/// increases `m`, so `m'` dominates the Cauchy improvement.
pub fn solve_tr_krylov<T: Scalar>(qm: &QuadraticModel<'_, T>, opts: &KrylovOptions) -> Result<Step<T>> {
    let dim = qm.g.len();
    let gnorm = norm(&qm.g);
    if gnorm == T::zero() {
        return Ok(Step::zero(dim));
    }
    if !all_finite(&qm.g) {
        return Err(Error::overflow(&qm.g));
    }
    let delta = qm.delta;
    let tol = c::<T>(opts.tol) * gnorm;
    let cap = opts.iteration_cap(dim);

    let mut s = vec![T::zero(); dim];
    // (-H) s, tracked so m' needs no extra product
    let mut bs = vec![T::zero(); dim];
    // residual of the minimization form: r = (-H)s - g
    let mut r: Vec<T> = qm.g.iter().map(|&x| -x).collect();
    let mut p = qm.g.clone();
    let mut rr = dot(&r, &r);
    let mut hvps = 0;
    let mut status = StepStatus::MaxIter;

    for _ in 0..cap {
        let hp = qm.hessian.apply(&p)?;
        hvps += 1;
        if !all_finite(&hp) {
            return Err(Error::overflow(&hp));
        }
        let bp: Vec<T> = hp.into_iter().map(|x| -x).collect();
        let kappa = dot(&p, &bp);
        if kappa <= T::zero() {
            let tau = to_boundary(&s, &p, delta);
            axpy(tau, &p, &mut s);
            axpy(tau, &bp, &mut bs);
            status = StepStatus::NegativeCurvature;
            break;
        }
        let alpha = rr / kappa;
        let mut trial = s.clone();
        axpy(alpha, &p, &mut trial);
        if norm(&trial) >= delta {
            let tau = to_boundary(&s, &p, delta);
            axpy(tau, &p, &mut s);
            axpy(tau, &bp, &mut bs);
            status = StepStatus::Boundary;
            break;
        }
        s = trial;
        axpy(alpha, &bp, &mut bs);
        axpy(alpha, &bp, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol {
            status = StepStatus::Interior;
            break;
        }
        let beta = rr_new / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = -ri + beta * *pi;
        }
        rr = rr_new;
    }

    let m = dot(&qm.g, &s) - c::<T>(0.5) * dot(&s, &bs);
    if !m.is_finite() || !all_finite(&s) {
        return Err(Error::overflow(&s));
    }
    Ok(Step { s, model_improvement: m, status, hvp_count: hvps })
}

/// Maximizer of `m` along `g` inside the region.
pub fn cauchy_point<T: Scalar>(qm: &QuadraticModel<'_, T>) -> Result<Step<T>> {
    let dim = qm.g.len();
    let gnorm = norm(&qm.g);
    if gnorm == T::zero() {
        return Ok(Step::zero(dim));
    }
    let u: Vec<T> = qm.g.iter().map(|&x| x / gnorm).collect();
    let hu = qm.hessian.apply(&u)?;
    let curv = dot(&u, &hu);
    let (t, status) = if curv >= T::zero() {
        (qm.delta, StepStatus::Boundary)
    } else {
        let t = gnorm / -curv;
        if t >= qm.delta {
            (qm.delta, StepStatus::Boundary)
        } else {
            (t, StepStatus::Interior)
        }
    };
    let s: Vec<T> = u.iter().map(|&x| x * t).collect();
    let m = t * gnorm + c::<T>(0.5) * t * t * curv;
    Ok(Step { s, model_improvement: m, status, hvp_count: 1 })
}

/// Exact global maximizer with its multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactStep<T> {
    pub step: Step<T>,
    /// `alpha` with `(-H + alpha I) s = g`, `-H + alpha I` PSD.
    pub multiplier: T,
    pub hard_case: bool,
}

/// Moré-Sorensen style exact solve through a full eigendecomposition.
pub fn solve_tr_exact<T: Scalar>(g: &[T], h: &DenseMatrix<T>, delta: T) -> Result<ExactStep<T>> {
    let n = h.dim();
    if g.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: g.len() });
    }
    if !(delta > T::zero()) {
        return Err(Error::Contract("trust radius must be positive".into()));
    }
    if n > 64 {
        return Err(Error::Contract(format!("exact solver limited to D <= 64, got {n}")));
    }
    let sym = DenseMatrix::from_fn(n, |i, j| c::<T>(0.5) * (h[(i, j)] + h[(j, i)]));
    let (lam, q) = sym.symmetric_eigen();
    let gamma: Vec<T> = (0..n).map(|k| (0..n).map(|r| q[(r, k)] * g[r]).sum()).collect();
    let lmax = lam[n - 1];
    let gnorm = norm(g);
    let scale = lam.iter().fold(T::one(), |m, &l| m.max(l.abs()));
    let eig_tol = c::<T>(1e-10) * scale;

    let step_at = |alpha: T, skip_top: bool| -> Vec<T> {
        let mut s = vec![T::zero(); n];
        for k in 0..n {
            if skip_top && (lmax - lam[k]) <= eig_tol {
                continue;
            }
            let coef = gamma[k] / (alpha - lam[k]);
            for r in 0..n {
                s[r] = s[r] + coef * q[(r, k)];
            }
        }
        s
    };
    let finish = |s: Vec<T>, alpha: T, status: StepStatus, hard: bool| -> ExactStep<T> {
        let hs = sym.matvec(&s);
        let m = dot(g, &s) + c::<T>(0.5) * dot(&s, &hs);
        ExactStep { step: Step { s, model_improvement: m, status, hvp_count: 0 }, multiplier: alpha, hard_case: hard }
    };

    // Interior: -H positive definite and the Newton point fits.
    if lmax < T::zero() {
        let s0 = step_at(T::zero(), false);
        if norm(&s0) <= delta {
            return Ok(finish(s0, T::zero(), StepStatus::Interior, false));
        }
    }

    let alpha_lo = lmax.max(T::zero());
    // Hard case: no gradient weight on the top eigenspace and the partial
    // step at alpha = lambda_max is still short of the boundary.
    let top_weight: T = (0..n)
        .filter(|&k| (lmax - lam[k]) <= eig_tol)
        .map(|k| gamma[k] * gamma[k])
        .sum::<T>()
        .sqrt();
    if lmax >= T::zero() && top_weight <= c::<T>(1e-12) * gnorm.max(T::min_positive_value()) {
        let partial = step_at(alpha_lo, true);
        let pn = norm(&partial);
        if pn <= delta {
            let tau = (delta * delta - pn * pn).max(T::zero()).sqrt();
            let k_top = n - 1;
            let mut s = partial;
            for r in 0..n {
                s[r] = s[r] + tau * q[(r, k_top)];
            }
            return Ok(finish(s, alpha_lo, StepStatus::Boundary, true));
        }
    }

    // Boundary root of |s(alpha)| = delta on (alpha_lo, alpha_hi].
    let phi = |alpha: T| -> T { (0..n).map(|k| (gamma[k] / (alpha - lam[k])).powi(2)).sum::<T>().sqrt() };
    let mut lo = alpha_lo;
    let mut hi = lmax.max(T::zero()) + gnorm / delta + scale * T::epsilon();
    while phi(hi) > delta {
        hi = hi + hi.max(T::one());
    }
    let mut alpha = hi;
    for _ in 0..500 {
        let ph = phi(alpha);
        if (ph - delta).abs() <= c::<T>(4.0) * T::epsilon() * delta {
            break;
        }
        if ph > delta {
            lo = alpha;
        } else {
            hi = alpha;
        }
        // Newton on 1/phi - 1/delta, which is nearly linear in alpha.
        let dphi: T = -(0..n).map(|k| gamma[k].powi(2) / (alpha - lam[k]).powi(3)).sum::<T>() / ph;
        let newton = alpha - (T::one() / ph - T::one() / delta) / (-dphi / (ph * ph));
        alpha = if newton > lo && newton < hi && newton.is_finite() { newton } else { c::<T>(0.5) * (lo + hi) };
        if hi - lo <= T::epsilon() * hi.abs().max(T::one()) {
            break;
        }
    }
    let s = step_at(alpha, false);
    Ok(finish(s, alpha, StepStatus::Boundary, false))
}

/// Largest violation of the optimality conditions of the maximization
/// subproblem, relative to `max(1, |g|)`.
pub fn kkt_residual<T: Scalar>(g: &[T], h: &DenseMatrix<T>, delta: T, sol: &ExactStep<T>) -> T {
    let s = &sol.step.s;
    let alpha = sol.multiplier;
    let hs = h.matvec(s);
    let stationarity = norm(&(0..g.len()).map(|i| -hs[i] + alpha * s[i] - g[i]).collect::<Vec<_>>());
    let sn = norm(s);
    let feasibility = (sn - delta).max(T::zero());
    let complementarity = (alpha * (delta - sn)).abs();
    let (lam, _) = h.symmetric_eigen();
    let psd = (lam[lam.len() - 1] - alpha).max(T::zero());
    let denom = norm(g).max(T::one());
    stationarity.max(feasibility).max(complementarity).max(psd) / denom
}
