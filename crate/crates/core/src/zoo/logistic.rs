use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::scalar::{c, Scalar};
use crate::vi::ModelSpec;

use super::{simulate_normals, GroundTruth, ZooModel};

const PRIOR_VAR: f64 = 6.25;

/// Logistic regression with `beta ~ N(0, 2.5^2)`; the first column of the
/// design is an intercept.
#[derive(Debug, Clone)]
pub struct LogisticRegression<T> {
    name: String,
    n: usize,
    p: usize,
    x: Vec<T>,
    y: Vec<T>,
}

pub fn logistic_regression<T: Scalar>(n: usize, p: usize, seed: u64) -> Result<ZooModel<T>> {
    if n == 0 || p == 0 || 2 * p > 512 {
        return Err(Error::Contract(format!("logistic regression size n={n}, p={p} out of range")));
    }
    let raw = simulate_normals(seed, 71, n * p + p);
    let (xs, beta) = raw.split_at(n * p);
    let mut x = xs.to_vec();
    for i in 0..n {
        x[i * p] = 1.0;
    }
    let mut s = crate::rng::Stream::new(seed, 72);
    let shrink = 1.0 / (p as f64).sqrt();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eta: f64 = (0..p).map(|k| x[i * p + k] * beta[k] * shrink).sum();
            let prob = 1.0 / (1.0 + (-eta).exp());
            if s.uniform() < prob {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let model = LogisticRegression {
        name: format!("logistic-n{n}-p{p}"),
        n,
        p,
        x: x.into_iter().map(T::lit).collect(),
        y: y.into_iter().map(T::lit).collect(),
    };
    Ok(ZooModel { spec: Arc::new(model), truth: GroundTruth::default(), analytic: None })
}

fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> LogisticRegression<T> {
    fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

impl<T: Scalar> ModelSpec<T> for LogisticRegression<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn latent_dim(&self) -> usize {
        self.p
    }

    fn log_density(&self, z: &[T]) -> T {
        let half = c::<T>(0.5);
        let lik: T = (0..self.n)
            .map(|i| {
                let eta = dot(self.row(i), z);
                self.y[i] * eta - softplus(eta)
            })
            .sum();
        let prior = -half * dot(z, z) / c(PRIOR_VAR)
            - T::from_usize_lossy(self.p) * half * (c::<T>(2.0 * PRIOR_VAR) * T::PI()).ln();
        lik + prior
    }

    fn log_density_grad(&self, z: &[T], grad: &mut [T]) -> T {
        for (g, &b) in grad.iter_mut().zip(z) {
            *g = -b / c(PRIOR_VAR);
        }
        let half = c::<T>(0.5);
        let mut lik = T::zero();
        for i in 0..self.n {
            let row = self.row(i);
            let eta = dot(row, z);
            lik = lik + self.y[i] * eta - softplus(eta);
            let resid = self.y[i] - sigmoid(eta);
            for (g, &xk) in grad.iter_mut().zip(row) {
                *g = *g + xk * resid;
            }
        }
        lik - half * dot(z, z) / c(PRIOR_VAR) - T::from_usize_lossy(self.p) * half * (c::<T>(2.0 * PRIOR_VAR) * T::PI()).ln()
    }

    fn hvp_log_density(&self, z: &[T], v: &[T], out: &mut [T]) -> bool {
        for (o, &x) in out.iter_mut().zip(v) {
            *o = -x / c(PRIOR_VAR);
        }
        for i in 0..self.n {
            let row = self.row(i);
            let pr = sigmoid(dot(row, z));
            let w = pr * (T::one() - pr) * dot(row, v);
            for (o, &xk) in out.iter_mut().zip(row) {
                *o = *o - xk * w;
            }
        }
        true
    }

    fn has_analytic_hvp(&self) -> bool {
        true
    }
}
