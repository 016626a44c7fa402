//! Mean-field Gaussian variational family and reparameterization-trick
//! estimators of the ELBO, its gradient and Hessian-vector products.
//!
//! The variational parameters are `omega = (mu, rho)` with
//! `sigma = exp(rho)`, and a draw is `z = mu + sigma * e` for `e ~ N(0, I)`.
//! Every estimator here is a deterministic function of `omega` and a fixed
//! [`BaseBatch`], so differentiating with the batch held fixed is exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm};
use crate::rng::{Provenance, Stream};
use crate::scalar::{c, Scalar};

/// An unnormalized log joint density `log p(x, z)` on an unconstrained latent
/// space. Jacobian terms of any reparameterization are folded into
/// `log_density`.
pub trait ModelSpec<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn latent_dim(&self) -> usize;

    fn log_density(&self, z: &[T]) -> T;

    /// Writes the gradient into `grad` and returns the log density.
    fn log_density_grad(&self, z: &[T], grad: &mut [T]) -> T;

    /// Hessian-vector product of the log density. Returns `false` when the
    /// model provides no analytic product, in which case callers fall back
    /// to finite differences.
    fn hvp_log_density(&self, _z: &[T], _v: &[T], _out: &mut [T]) -> bool {
        false
    }

    fn has_analytic_hvp(&self) -> bool {
        false
    }
}

/// Mean-field Gaussian parameters: means and log standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams<T> {
    pub mu: Vec<T>,
    pub rho: Vec<T>,
}

impl<T: Scalar> VariationalParams<T> {
    pub fn new(mu: Vec<T>, rho: Vec<T>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::DimensionMismatch { expected: mu.len(), found: rho.len() });
        }
        Ok(Self { mu, rho })
    }

    /// `mu = 0`, `sigma = 1`.
    pub fn standard(d: usize) -> Self {
        Self { mu: vec![T::zero(); d], rho: vec![T::zero(); d] }
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.len()
    }

    /// Total dimension `D = 2d`.
    pub fn dim(&self) -> usize {
        2 * self.mu.len()
    }

    pub fn sigma(&self) -> Vec<T> {
        self.rho.iter().map(|r| r.exp()).collect()
    }

    /// Flat `[mu, rho]` layout used by the optimizers.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = self.mu.clone();
        v.extend_from_slice(&self.rho);
        v
    }

    pub fn from_flat(flat: &[T]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::Contract(format!("flat parameter length {} is odd", flat.len())));
        }
        let d = flat.len() / 2;
        Ok(Self { mu: flat[..d].to_vec(), rho: flat[d..].to_vec() })
    }

    /// `omega + s` for a flat step `s`.
    pub fn step(&self, s: &[T]) -> Result<Self> {
        let d = self.latent_dim();
        if s.len() != 2 * d {
            return Err(Error::DimensionMismatch { expected: 2 * d, found: s.len() });
        }
        Ok(Self {
            mu: self.mu.iter().zip(&s[..d]).map(|(&a, &b)| a + b).collect(),
            rho: self.rho.iter().zip(&s[d..]).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.mu) && all_finite(&self.rho)
    }

    /// Analytic entropy of the Gaussian, `sum(rho) + d/2 * log(2 pi e)`.
    pub fn entropy(&self) -> T {
        let d = T::from_usize_lossy(self.latent_dim());
        let two_pi_e = c::<T>(2.0) * T::PI() * T::E();
        self.rho.iter().copied().sum::<T>() + d * c::<T>(0.5) * two_pi_e.ln()
    }

    pub fn to_f64(&self) -> VariationalParams<f64> {
        VariationalParams {
            mu: self.mu.iter().map(|x| x.as_f64()).collect(),
            rho: self.rho.iter().map(|x| x.as_f64()).collect(),
        }
    }
}

/// `N x d` standard-normal draws, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseBatch<T> {
    n: usize,
    d: usize,
    draws: Vec<T>,
    provenance: Option<Provenance>,
}

impl<T: Scalar> BaseBatch<T> {
    /// Draw `n` rows from `stream`, recording where in the stream they came from.
    pub fn generate(n: usize, d: usize, stream: &mut Stream) -> Self {
        let provenance = Some(stream.provenance());
        let mut draws = vec![T::zero(); n * d];
        stream.fill_standard_normal(&mut draws);
        Self { n, d, draws, provenance }
    }

    /// Fresh batch from `(seed, stream id)`.
    pub fn seeded(n: usize, d: usize, seed: u64, stream: u64) -> Self {
        Self::generate(n, d, &mut Stream::new(seed, stream))
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
        }
        Ok(Self { n: rows.len(), d, draws: rows.iter().flatten().copied().collect(), provenance: None })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self { n, d, draws: vec![T::zero(); n * d], provenance: None }
    }

    /// Regenerate the batch from its provenance.
    pub fn regenerate(&self) -> Option<Self> {
        self.provenance.map(|p| Self::generate(self.n, self.d, &mut Stream::at(p)))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.draws[i * self.d..(i + 1) * self.d]
    }

    pub fn provenance(&self) -> Option<Provenance> {
        self.provenance
    }

    /// Rows `[start, end)` as a new batch sharing no provenance.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self { n: end - start, d: self.d, draws: self.draws[start * self.d..end * self.d].to_vec(), provenance: None }
    }
}

/// How the `-log q` term of the ELBO is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMode {
    /// Closed-form Gaussian entropy.
    #[default]
    Analytic,
    /// Monte-Carlo `-log q(z_i)` per draw.
    McEntropy,
}

/// Stochastic gradient of the ELBO with the sub-batch means kept for the
/// jackknife.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample<T> {
    pub mean_gradient: Vec<T>,
    pub subbatch_gradients: Vec<Vec<T>>,
    pub batch_size: usize,
    /// ELBO estimate on the same batch.
    pub elbo: T,
}

impl<T: Scalar> GradientSample<T> {
    pub fn norm(&self) -> T {
        norm(&self.mean_gradient)
    }
}

/// Work below this many `N * d` entries is evaluated on the calling thread.
/// The reduction order is the same either way.
const PARALLEL_WORK: usize = 1 << 14;

fn chunk_bounds(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let parts = parts.clamp(1, n.max(1));
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for j in 0..parts {
        let len = base + usize::from(j < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Map `f` over chunks, in parallel when the batch is large. Output order
/// follows chunk order.
fn map_chunks<R: Send>(
    bounds: &[(usize, usize)],
    work: usize,
    f: impl Fn(usize, usize) -> R + Sync + Send,
) -> Vec<R> {
    if work >= PARALLEL_WORK && bounds.len() > 1 {
        bounds.par_iter().map(|&(a, b)| f(a, b)).collect()
    } else {
        bounds.iter().map(|&(a, b)| f(a, b)).collect()
    }
}

fn check_dims<T: Scalar>(model: &dyn ModelSpec<T>, omega: &VariationalParams<T>, batch: &BaseBatch<T>) -> Result<()> {
    let d = model.latent_dim();
    if omega.latent_dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: omega.latent_dim() });
    }
    if batch.latent_dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: batch.latent_dim() });
    }
    if batch.is_empty() {
        return Err(Error::Contract("empty base batch".into()));
    }
    Ok(())
}

/// `z = mu + exp(rho) * e`.
pub fn reparameterize<T: Scalar>(omega: &VariationalParams<T>, e: &[T]) -> Result<Vec<T>> {
    if e.len() != omega.latent_dim() {
        return Err(Error::DimensionMismatch { expected: omega.latent_dim(), found: e.len() });
    }
    let mut z = vec![T::zero(); e.len()];
    reparameterize_into(omega, e, &mut z);
    Ok(z)
}

#[inline]
fn reparameterize_into<T: Scalar>(omega: &VariationalParams<T>, e: &[T], z: &mut [T]) {
    for i in 0..e.len() {
        z[i] = omega.mu[i] + omega.rho[i].exp() * e[i];
    }
}

/// Per-draw log densities `log p(x, g_omega(e_i))`.
pub fn log_density_samples<T: Scalar>(
    model: &dyn ModelSpec<T>,
    omega: &VariationalParams<T>,
    batch: &BaseBatch<T>,
) -> Result<Vec<T>> {
    check_dims(model, omega, batch)?;
    let d = batch.latent_dim();
    let bounds = chunk_bounds(batch.len(), 16);
    let parts = map_chunks(&bounds, batch.len() * d, |a, b| {
        let mut z = vec![T::zero(); d];
        (a..b)
            .map(|i| {
                reparameterize_into(omega, batch.row(i), &mut z);
                model.log_density(&z)
            })
            .collect::<Vec<T>>()
    });
    let out: Vec<T> = parts.into_iter().flatten().collect();
    if !all_finite(&out) {
        return Err(Error::overflow(&omega.to_flat()));
    }
    Ok(out)
}

/// Unbiased Monte-Carlo ELBO estimate on a fixed batch with analytic entropy.
pub fn elbo_estimate<T: Scalar>(model: &dyn ModelSpec<T>, omega: &VariationalParams<T>, batch: &BaseBatch<T>) -> Result<T> {
    elbo_estimate_with(model, omega, batch, EntropyMode::Analytic)
}

pub fn elbo_estimate_with<T: Scalar>(
    model: &dyn ModelSpec<T>,
    omega: &VariationalParams<T>,
    batch: &BaseBatch<T>,
    mode: EntropyMode,
) -> Result<T> {
    let lp = log_density_samples(model, omega, batch)?;
    let n = T::from_usize_lossy(batch.len());
    let mean_lp = lp.iter().copied().sum::<T>() / n;
    let entropy = match mode {
        EntropyMode::Analytic => omega.entropy(),
        EntropyMode::McEntropy => {
            // -log q(z_i) = sum(rho) + d/2 log(2 pi) + |e_i|^2 / 2
            let d = T::from_usize_lossy(batch.latent_dim());
            let half = c::<T>(0.5);
            let sq: T = (0..batch.len())
                .map(|i| batch.row(i).iter().map(|&e| e * e).sum::<T>())
                .sum::<T>()
                / n;
            omega.rho.iter().copied().sum::<T>() + d * half * (c::<T>(2.0) * T::PI()).ln() + half * sq
        }
    };
    let v = mean_lp + entropy;
    if !v.is_finite() {
        return Err(Error::overflow(&omega.to_flat()));
    }
    Ok(v)
}

/// Accumulate the ELBO gradient sums (without entropy) over rows `[a, b)`.
/// Returns `(sum of log densities, gradient sum in flat [mu, rho] layout)`.
fn gradient_sums<T: Scalar>(
    model: &dyn ModelSpec<T>,
    omega: &VariationalParams<T>,
    sigma: &[T],
    batch: &BaseBatch<T>,
    a: usize,
    b: usize,
) -> (T, Vec<T>) {
    let d = batch.latent_dim();
    let mut z = vec![T::zero(); d];
    let mut gz = vec![T::zero(); d];
    let mut acc = vec![T::zero(); 2 * d];
    let mut lp_sum = T::zero();
    for i in a..b {
        let e = batch.row(i);
        reparameterize_into(omega, e, &mut z);
        lp_sum = lp_sum + model.log_density_grad(&z, &mut gz);
        for j in 0..d {
            acc[j] = acc[j] + gz[j];
            acc[d + j] = acc[d + j] + gz[j] * e[j] * sigma[j];
        }
    }
    (lp_sum, acc)
}

/// Gradient of [`elbo_estimate`] with respect to `(mu, rho)` holding the
/// batch fixed, split into `subbatches` contiguous groups for the jackknife.
pub fn stochastic_gradient<T: Scalar>(
    model: &dyn ModelSpec<T>,
    omega: &VariationalParams<T>,
    batch: &BaseBatch<T>,
    subbatches: usize,
) -> Result<GradientSample<T>> {
    check_dims(model, omega, batch)?;
    let d = batch.latent_dim();
    let sigma = omega.sigma();
    let bounds = chunk_bounds(batch.len(), subbatches);
    let sums = map_chunks(&bounds, batch.len() * d, |a, b| gradient_sums(model, omega, &sigma, batch, a, b));

    let n = T::from_usize_lossy(batch.len());
    let mut mean = vec![T::zero(); 2 * d];
    let mut lp_total = T::zero();
    let mut subs = Vec::with_capacity(bounds.len());
    for (&(a, b), (lp, acc)) in bounds.iter().zip(&sums) {
        lp_total = lp_total + *lp;
        let m = T::from_usize_lossy(b - a);
        let mut sub: Vec<T> = acc.iter().map(|&x| x / m).collect();
        for j in 0..d {
            sub[d + j] = sub[d + j] + T::one();
        }
        for (k, &x) in acc.iter().enumerate() {
            mean[k] = mean[k] + x;
        }
        subs.push(sub);
    }
    for x in mean.iter_mut() {
        *x = *x / n;
    }
    for x in mean[d..].iter_mut() {
        *x = *x + T::one();
    }
    let elbo = lp_total / n + omega.entropy();
    if !all_finite(&mean) || !elbo.is_finite() {
        return Err(Error::overflow(&omega.to_flat()));
    }
    Ok(GradientSample { mean_gradient: mean, subbatch_gradients: subs, batch_size: batch.len(), elbo })
}

/// Plain `(elbo, gradient)` on a batch, no sub-batch bookkeeping.
pub fn elbo_and_gradient<T: Scalar>(
    model: &dyn ModelSpec<T>,
    omega: &VariationalParams<T>,
    batch: &BaseBatch<T>,
) -> Result<(T, Vec<T>)> {
    let gs = stochastic_gradient(model, omega, batch, 16)?;
    Ok((gs.elbo, gs.mean_gradient))
}

/// How Hessian-vector products are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HvpMode {
    /// Analytic model HVP when available, finite differences otherwise.
    #[default]
    Auto,
    /// Always central finite differences of the stochastic gradient.
    FiniteDifference,
}

/// Hessian of the ELBO estimate at a fixed `omega` and batch, applied
/// matrix-free. Per-draw `z_i` and `grad log p(z_i)` are cached so each
/// product costs one model HVP per draw.
pub struct StochasticHessian<'a, T: Scalar> {
    model: &'a dyn ModelSpec<T>,
    omega: VariationalParams<T>,
    batch: BaseBatch<T>,
    sigma: Vec<T>,
    z: Vec<T>,
    grad_z: Vec<T>,
    mode: HvpMode,
}

impl<'a, T: Scalar> StochasticHessian<'a, T> {
    pub fn new(model: &'a dyn ModelSpec<T>, omega: &VariationalParams<T>, batch: BaseBatch<T>) -> Result<Self> {
        Self::with_mode(model, omega, batch, HvpMode::Auto)
    }

    pub fn with_mode(
        model: &'a dyn ModelSpec<T>,
        omega: &VariationalParams<T>,
        batch: BaseBatch<T>,
        mode: HvpMode,
    ) -> Result<Self> {
        check_dims(model, omega, &batch)?;
        let mode = if model.has_analytic_hvp() { mode } else { HvpMode::FiniteDifference };
        let d = batch.latent_dim();
        let sigma = omega.sigma();
        let (mut z, mut grad_z) = (Vec::new(), Vec::new());
        if mode == HvpMode::Auto {
            z = vec![T::zero(); batch.len() * d];
            grad_z = vec![T::zero(); batch.len() * d];
            for i in 0..batch.len() {
                reparameterize_into(omega, batch.row(i), &mut z[i * d..(i + 1) * d]);
                let lp = model.log_density_grad(&z[i * d..(i + 1) * d], &mut grad_z[i * d..(i + 1) * d]);
                if !lp.is_finite() {
                    return Err(Error::overflow(&omega.to_flat()));
                }
            }
            if !all_finite(&grad_z) {
                return Err(Error::overflow(&omega.to_flat()));
            }
        }
        Ok(Self { model, omega: omega.clone(), batch, sigma, z, grad_z, mode })
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    pub fn omega(&self) -> &VariationalParams<T> {
        &self.omega
    }

    pub fn batch(&self) -> &BaseBatch<T> {
        &self.batch
    }

    /// `H v` for a flat direction `v = [v_mu, v_rho]`.
    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        let dd = self.dim();
        if v.len() != dd {
            return Err(Error::DimensionMismatch { expected: dd, found: v.len() });
        }
        if v.iter().all(|x| *x == T::zero()) {
            return Ok(vec![T::zero(); dd]);
        }
        if !all_finite(v) {
            return Err(Error::Contract("non-finite direction".into()));
        }
        let out = match self.mode {
            HvpMode::Auto => self.apply_analytic(v),
            HvpMode::FiniteDifference => self.apply_fd(v)?,
        };
        if !all_finite(&out) {
            return Err(Error::overflow(&self.omega.to_flat()));
        }
        Ok(out)
    }

    fn apply_analytic(&self, v: &[T]) -> Vec<T> {
        let d = self.batch.latent_dim();
        let (va, vb) = v.split_at(d);
        let bounds = chunk_bounds(self.batch.len(), 8);
        let parts = map_chunks(&bounds, self.batch.len() * d, |a, b| {
            let mut acc = vec![T::zero(); 2 * d];
            let mut dz = vec![T::zero(); d];
            let mut w = vec![T::zero(); d];
            for i in a..b {
                let e = self.batch.row(i);
                let z = &self.z[i * d..(i + 1) * d];
                let gz = &self.grad_z[i * d..(i + 1) * d];
                for j in 0..d {
                    dz[j] = va[j] + self.sigma[j] * e[j] * vb[j];
                }
                let ok = self.model.hvp_log_density(z, &dz, &mut w);
                debug_assert!(ok);
                for j in 0..d {
                    let se = self.sigma[j] * e[j];
                    acc[j] = acc[j] + w[j];
                    acc[d + j] = acc[d + j] + w[j] * se + gz[j] * se * vb[j];
                }
            }
            acc
        });
        let n = T::from_usize_lossy(self.batch.len());
        let mut out = vec![T::zero(); 2 * d];
        for p in parts {
            for (o, x) in out.iter_mut().zip(p) {
                *o = *o + x;
            }
        }
        for o in out.iter_mut() {
            *o = *o / n;
        }
        out
    }

    fn apply_fd(&self, v: &[T]) -> Result<Vec<T>> {
        let flat = self.omega.to_flat();
        let h = T::epsilon().cbrt() * (T::one() + norm(&flat)) / norm(v);
        let plus: Vec<T> = flat.iter().zip(v).map(|(&w, &x)| w + h * x).collect();
        let minus: Vec<T> = flat.iter().zip(v).map(|(&w, &x)| w - h * x).collect();
        let (_, gp) = elbo_and_gradient(self.model, &VariationalParams::from_flat(&plus)?, &self.batch)?;
        let (_, gm) = elbo_and_gradient(self.model, &VariationalParams::from_flat(&minus)?, &self.batch)?;
        let two_h = c::<T>(2.0) * h;
        Ok(gp.iter().zip(&gm).map(|(&a, &b)| (a - b) / two_h).collect())
    }
}

/// One-shot `H v` for the ELBO estimate at `omega` on `batch`.
pub fn stochastic_hvp<T: Scalar>(
    model: &dyn ModelSpec<T>,
    omega: &VariationalParams<T>,
    batch: &BaseBatch<T>,
    v: &[T],
) -> Result<Vec<T>> {
    StochasticHessian::new(model, omega, batch.clone())?.apply(v)
}

/// Delete-one jackknife standard error of the gradient norm.
pub fn jackknife_grad_norm_sd<T: Scalar>(gs: &GradientSample<T>) -> Result<T> {
    let subs = &gs.subbatch_gradients;
    let j = subs.len();
    if j < 2 {
        return Err(Error::Contract(format!("jackknife needs at least 2 sub-batches, got {j}")));
    }
    let dim = subs[0].len();
    let mut total = vec![T::zero(); dim];
    for s in subs {
        for (t, &x) in total.iter_mut().zip(s) {
            *t = *t + x;
        }
    }
    let jm1 = T::from_usize_lossy(j - 1);
    let thetas: Vec<T> = subs
        .iter()
        .map(|s| total.iter().zip(s).map(|(&t, &x)| ((t - x) / jm1).powi(2)).sum::<T>().sqrt())
        .collect();
    let jf = T::from_usize_lossy(j);
    let mean = thetas.iter().copied().sum::<T>() / jf;
    let ss: T = thetas.iter().map(|&t| (t - mean).powi(2)).sum();
    Ok((jm1 / jf * ss).sqrt())
}

/// Thresholds for the gradient batch-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchAdaptation {
    pub n_min: usize,
    pub c_low: f64,
    pub c_high: f64,
}

impl Default for BatchAdaptation {
    fn default() -> Self {
        Self { n_min: 64, c_low: 2.0, c_high: 10.0 }
    }
}

impl BatchAdaptation {
    /// Thresholds for a `dim`-dimensional gradient.
    ///
    /// With no signal, `|g| / sd(|g|)` is about `sqrt(2 dim)`, so fixed
    /// thresholds stop doubling once `dim` exceeds a handful. Scaling both
    /// by `sqrt(2 dim)` keeps the rule meaningful: the batch doubles while
    /// the gradient is within 1.5x of the noise level and halves above 5x.
    pub fn for_dim(dim: usize) -> Self {
        let r = (2.0 * dim as f64).sqrt();
        Self { n_min: 64, c_low: (1.5 * r).max(2.0), c_high: (5.0 * r).max(10.0) }
    }
}

/// Double the gradient batch when the gradient norm is small relative to its
/// standard deviation, halve it (down to `n_min`) when large.
pub fn adapt_gradient_batch<T: Scalar>(n: usize, grad_norm: T, sd: T, rule: &BatchAdaptation) -> usize {
    if grad_norm < c::<T>(rule.c_low) * sd {
        n.saturating_mul(2)
    } else if grad_norm > c::<T>(rule.c_high) * sd {
        (n / 2).max(rule.n_min)
    } else {
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Standard normal log density, normalized.
    struct StdNormal(usize);

    impl ModelSpec<f64> for StdNormal {
        fn name(&self) -> &str {
            "std-normal"
        }
        fn latent_dim(&self) -> usize {
            self.0
        }
        fn log_density(&self, z: &[f64]) -> f64 {
            -0.5 * z.iter().map(|x| x * x).sum::<f64>() - 0.5 * self.0 as f64 * (2.0 * std::f64::consts::PI).ln()
        }
        fn log_density_grad(&self, z: &[f64], g: &mut [f64]) -> f64 {
            for (gi, zi) in g.iter_mut().zip(z) {
                *gi = -zi;
            }
            self.log_density(z)
        }
        fn hvp_log_density(&self, _z: &[f64], v: &[f64], out: &mut [f64]) -> bool {
            for (o, x) in out.iter_mut().zip(v) {
                *o = -x;
            }
            true
        }
        fn has_analytic_hvp(&self) -> bool {
            true
        }
    }

    #[test]
    fn reparameterize_zero_noise_is_mean() {
        let om = VariationalParams::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(reparameterize(&om, &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn reparameterize_scales_noise() {
        let om = VariationalParams::new(vec![0.0], vec![2f64.ln()]).unwrap();
        assert_relative_eq!(reparameterize(&om, &[1.5]).unwrap()[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn reparameterize_dimension_mismatch() {
        let om = VariationalParams::<f64>::standard(2);
        assert!(matches!(reparameterize(&om, &[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn elbo_single_zero_draw_is_hand_value() {
        let m = StdNormal(2);
        let om = VariationalParams::new(vec![0.5, -1.0], vec![0.1, -0.2]).unwrap();
        let b = BaseBatch::zeros(1, 2);
        let expected = m.log_density(&om.mu) + (0.1 - 0.2) + (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert_relative_eq!(elbo_estimate(&m, &om, &b).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn rho_gradient_with_zero_noise_is_entropy_only() {
        let m = StdNormal(3);
        let om = VariationalParams::new(vec![0.3, -0.1, 2.0], vec![0.5, 0.0, -1.0]).unwrap();
        let gs = stochastic_gradient(&m, &om, &BaseBatch::zeros(4, 3), 2).unwrap();
        assert_eq!(&gs.mean_gradient[3..], &[1.0, 1.0, 1.0]);
        assert_relative_eq!(gs.mean_gradient[0], -0.3);
    }

    #[test]
    fn mean_gradient_is_average_of_subbatches() {
        let m = StdNormal(3);
        let om = VariationalParams::new(vec![0.3, -0.1, 2.0], vec![0.5, 0.0, -1.0]).unwrap();
        let b = BaseBatch::seeded(256, 3, 9, 1);
        let gs = stochastic_gradient(&m, &om, &b, 16).unwrap();
        assert_eq!(gs.subbatch_gradients.len(), 16);
        for k in 0..6 {
            let avg: f64 = gs.subbatch_gradients.iter().map(|s| s[k]).sum::<f64>() / 16.0;
            assert_relative_eq!(avg, gs.mean_gradient[k], max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn hvp_of_zero_is_zero() {
        let m = StdNormal(2);
        let om = VariationalParams::standard(2);
        let b = BaseBatch::seeded(8, 2, 1, 2);
        assert_eq!(stochastic_hvp(&m, &om, &b, &[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn fd_hvp_matches_analytic() {
        let m = StdNormal(3);
        let om = VariationalParams::new(vec![0.3, -0.1, 0.7], vec![0.2, 0.0, -0.4]).unwrap();
        let b = BaseBatch::seeded(32, 3, 5, 2);
        let v = [0.3, -1.0, 0.5, 0.2, 0.9, -0.7];
        let exact = StochasticHessian::new(&m, &om, b.clone()).unwrap().apply(&v).unwrap();
        let fd = StochasticHessian::with_mode(&m, &om, b, HvpMode::FiniteDifference).unwrap().apply(&v).unwrap();
        for (a, f) in exact.iter().zip(&fd) {
            assert_relative_eq!(*a, *f, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn jackknife_identical_subbatches_is_zero() {
        let gs = GradientSample {
            mean_gradient: vec![1.0, 2.0],
            subbatch_gradients: vec![vec![1.0, 2.0]; 8],
            batch_size: 8,
            elbo: 0.0,
        };
        assert_eq!(jackknife_grad_norm_sd(&gs).unwrap(), 0.0);
    }

    #[test]
    fn jackknife_two_subbatches_hand_value() {
        // theta_(1) = |[3,0]| = 3, theta_(2) = 1, mean 2, ((J-1)/J) * 2 = 1
        let gs = GradientSample {
            mean_gradient: vec![2.0, 0.0],
            subbatch_gradients: vec![vec![1.0, 0.0], vec![3.0, 0.0]],
            batch_size: 2,
            elbo: 0.0,
        };
        assert_relative_eq!(jackknife_grad_norm_sd(&gs).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn jackknife_needs_two() {
        let gs = GradientSample { mean_gradient: vec![1.0], subbatch_gradients: vec![vec![1.0]], batch_size: 1, elbo: 0.0 };
        assert!(jackknife_grad_norm_sd(&gs).is_err());
    }

    #[test]
    fn batch_rule_doubles_halves_and_floors() {
        let rule = BatchAdaptation::default();
        assert_eq!(adapt_gradient_batch(256, 0.1, 1.0, &rule), 512);
        assert_eq!(adapt_gradient_batch(256, 100.0, 1.0, &rule), 128);
        assert_eq!(adapt_gradient_batch(64, 100.0, 1.0, &rule), 64);
        assert_eq!(adapt_gradient_batch(256, 5.0, 1.0, &rule), 256);
    }

    #[test]
    fn overflow_is_an_error_value() {
        let m = StdNormal(1);
        let om = VariationalParams::new(vec![1e200], vec![0.0]).unwrap();
        let err = elbo_estimate(&m, &om, &BaseBatch::zeros(1, 1)).unwrap_err();
        assert!(err.is_overflow());
    }

    #[test]
    fn batch_regenerates_from_provenance() {
        let mut s = Stream::new(3, 1);
        let _ = BaseBatch::<f64>::generate(5, 2, &mut s);
        let b = BaseBatch::<f64>::generate(7, 2, &mut s);
        assert_eq!(b.regenerate().unwrap(), b);
    }
}
