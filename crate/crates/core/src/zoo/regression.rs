use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use crate::vi::ModelSpec;

use super::{simulate_normals, GroundTruth, ZooModel};

const PRIOR_VAR: f64 = 25.0;

/// Bayesian linear regression with unknown noise scale.
///
/// Latent `z = (beta_1..beta_p, tau)` with `tau = log(noise sd)`;
/// `beta ~ N(0, 5^2)`, `tau ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct LinearRegression<T> {
    name: String,
    n: usize,
    p: usize,
    x: Vec<T>,
    y: Vec<T>,
}

pub fn bayes_linear_regression<T: Scalar>(n: usize, p: usize, seed: u64) -> Result<ZooModel<T>> {
    if n == 0 || p == 0 || 2 * (p + 1) > 512 {
        return Err(Error::Contract(format!("linear regression size n={n}, p={p} out of range")));
    }
    let raw = simulate_normals(seed, 51, n * p + p + n);
    let (xs, rest) = raw.split_at(n * p);
    let (beta, noise) = rest.split_at(p);
    let mut x = xs.to_vec();
    for i in 0..n {
        x[i * p] = 1.0;
    }
    let y: Vec<f64> = (0..n)
        .map(|i| (0..p).map(|k| x[i * p + k] * beta[k]).sum::<f64>() + 0.5 * noise[i])
        .collect();
    let model = LinearRegression {
        name: format!("linreg-n{n}-p{p}"),
        n,
        p,
        x: x.into_iter().map(T::lit).collect(),
        y: y.into_iter().map(T::lit).collect(),
    };
    Ok(ZooModel { spec: Arc::new(model), truth: GroundTruth::default(), analytic: None })
}

impl<T: Scalar> LinearRegression<T> {
    fn residuals(&self, beta: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let row = &self.x[i * self.p..(i + 1) * self.p];
                self.y[i] - crate::linalg::dot(row, beta)
            })
            .collect()
    }
}

impl<T: Scalar> ModelSpec<T> for LinearRegression<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn latent_dim(&self) -> usize {
        self.p + 1
    }

    fn log_density(&self, z: &[T]) -> T {
        let (beta, tau) = (&z[..self.p], z[self.p]);
        let half = c::<T>(0.5);
        let r = self.residuals(beta);
        let w = (-(tau + tau)).exp();
        let n = T::from_usize_lossy(self.n);
        let ln2pi = (c::<T>(2.0) * T::PI()).ln();
        let lik = -half * w * r.iter().map(|&e| e * e).sum::<T>() - n * tau - n * half * ln2pi;
        let prior_beta = -half * beta.iter().map(|&b| b * b).sum::<T>() / c(PRIOR_VAR)
            - T::from_usize_lossy(self.p) * half * (c::<T>(2.0 * PRIOR_VAR) * T::PI()).ln();
        let prior_tau = -half * tau * tau - half * ln2pi;
        lik + prior_beta + prior_tau
    }

    fn log_density_grad(&self, z: &[T], grad: &mut [T]) -> T {
        let (beta, tau) = (&z[..self.p], z[self.p]);
        let r = self.residuals(beta);
        let w = (-(tau + tau)).exp();
        for k in 0..self.p {
            let xr: T = (0..self.n).map(|i| self.x[i * self.p + k] * r[i]).sum();
            grad[k] = w * xr - beta[k] / c(PRIOR_VAR);
        }
        let rss: T = r.iter().map(|&e| e * e).sum();
        grad[self.p] = w * rss - T::from_usize_lossy(self.n) - tau;
        self.log_density(z)
    }

    fn hvp_log_density(&self, z: &[T], v: &[T], out: &mut [T]) -> bool {
        let (beta, tau) = (&z[..self.p], z[self.p]);
        let (vb, vt) = (&v[..self.p], v[self.p]);
        let r = self.residuals(beta);
        let w = (-(tau + tau)).exp();
        let two = c::<T>(2.0);
        let xv: Vec<T> = (0..self.n)
            .map(|i| crate::linalg::dot(&self.x[i * self.p..(i + 1) * self.p], vb))
            .collect();
        for k in 0..self.p {
            let xtxv: T = (0..self.n).map(|i| self.x[i * self.p + k] * xv[i]).sum();
            let xtr: T = (0..self.n).map(|i| self.x[i * self.p + k] * r[i]).sum();
            out[k] = -w * xtxv - vb[k] / c(PRIOR_VAR) - two * w * xtr * vt;
        }
        let rxv: T = r.iter().zip(&xv).map(|(&a, &b)| a * b).sum();
        let rss: T = r.iter().map(|&e| e * e).sum();
        out[self.p] = -two * w * rxv + (-two * w * rss - T::one()) * vt;
        true
    }

    fn has_analytic_hvp(&self) -> bool {
        true
    }
}
