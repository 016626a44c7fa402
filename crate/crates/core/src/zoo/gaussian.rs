use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::scalar::{c, Scalar};
use crate::vi::{ModelSpec, VariationalParams};

use super::{AnalyticElbo, GroundTruth, ZooModel};

/// How the precision matrix of a [`GaussianPosterior`] is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum Precision {
    Identity,
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
    /// `B B^T / d + I / 2` for a standard-normal `B` drawn from `seed`.
    Random { seed: u64 },
}

/// Normalized zero-mean Gaussian `N(0, Lambda^{-1})`; log evidence is 0.
#[derive(Debug, Clone)]
pub struct GaussianPosterior<T> {
    name: String,
    precision: DenseMatrix<T>,
    diag: Vec<T>,
    log_norm: T,
    lambda_max: T,
}

impl<T: Scalar> GaussianPosterior<T> {
    pub fn precision(&self) -> &DenseMatrix<T> {
        &self.precision
    }
}

/// Zero-mean Gaussian target with the given precision.
pub fn gaussian_posterior<T: Scalar>(d: usize, spec: Precision) -> Result<ZooModel<T>> {
    if d == 0 || d > 64 {
        return Err(Error::Contract(format!("gaussian posterior dimension {d} outside 1..=64")));
    }
    let (label, dense): (&str, DenseMatrix<f64>) = match &spec {
        Precision::Identity => ("identity", DenseMatrix::identity(d)),
        Precision::Diagonal(v) => {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: v.len() });
            }
            ("diagonal", DenseMatrix::from_diagonal(v))
        }
        Precision::Dense(rows) => {
            let m = DenseMatrix::from_rows(rows)?;
            if m.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: m.dim() });
            }
            ("dense", m)
        }
        Precision::Random { seed } => {
            let b = super::simulate_normals(*seed, 41, d * d);
            let m = DenseMatrix::from_fn(d, |i, j| {
                let s: f64 = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum();
                s / d as f64 + if i == j { 0.5 } else { 0.0 }
            });
            ("random", m)
        }
    };
    if !dense.is_symmetric(1e-12) {
        return Err(Error::Contract("precision matrix is not symmetric".into()));
    }
    let chol = dense
        .cholesky()
        .ok_or_else(|| Error::Contract("precision matrix is not positive definite".into()))?;
    let log_det: f64 = 2.0 * (0..d).map(|i| chol[(i, i)].ln()).sum::<f64>();
    let (eig, _) = dense.symmetric_eigen();

    // Diagonal of the covariance, Lambda^{-1}, by solving with the factor.
    let mut cov_diag = vec![0.0; d];
    for (j, slot) in cov_diag.iter_mut().enumerate() {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        // forward then backward substitution
        let mut y = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|k| chol[(i, k)] * y[k]).sum();
            y[i] = (e[i] - s) / chol[(i, i)];
        }
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let s: f64 = ((i + 1)..d).map(|k| chol[(k, i)] * x[k]).sum();
            x[i] = (y[i] - s) / chol[(i, i)];
        }
        *slot = x[j];
    }

    let precision = DenseMatrix::from_fn(d, |i, j| T::lit(dense[(i, j)]));
    let diag = precision.diagonal();
    let model = GaussianPosterior {
        name: format!("gaussian{d}-{label}"),
        precision,
        log_norm: T::lit(0.5 * log_det - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()),
        lambda_max: T::lit(eig[d - 1]),
        diag: diag.clone(),
    };
    let optimum = VariationalParams {
        mu: vec![T::zero(); d],
        rho: diag.iter().map(|&l| -c::<T>(0.5) * l.ln()).collect(),
    };
    let truth = GroundTruth {
        posterior_mean: Some(vec![T::zero(); d]),
        posterior_cov_diag: Some(cov_diag.into_iter().map(T::lit).collect()),
        posterior_mode: Some(vec![T::zero(); d]),
        log_evidence: Some(T::zero()),
        optimum: Some(optimum),
    };
    let shared = Arc::new(model);
    Ok(ZooModel { spec: shared.clone(), truth, analytic: Some(shared) })
}

impl<T: Scalar> ModelSpec<T> for GaussianPosterior<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn latent_dim(&self) -> usize {
        self.diag.len()
    }

    fn log_density(&self, z: &[T]) -> T {
        let lz = self.precision.matvec(z);
        -c::<T>(0.5) * dot(z, &lz) + self.log_norm
    }

    fn log_density_grad(&self, z: &[T], grad: &mut [T]) -> T {
        let lz = self.precision.matvec(z);
        for (g, &v) in grad.iter_mut().zip(&lz) {
            *g = -v;
        }
        -c::<T>(0.5) * dot(z, &lz) + self.log_norm
    }

    fn hvp_log_density(&self, _z: &[T], v: &[T], out: &mut [T]) -> bool {
        let lv = self.precision.matvec(v);
        for (o, x) in out.iter_mut().zip(lv) {
            *o = -x;
        }
        true
    }

    fn has_analytic_hvp(&self) -> bool {
        true
    }
}

impl<T: Scalar> AnalyticElbo<T> for GaussianPosterior<T> {
    fn elbo(&self, omega: &VariationalParams<T>) -> T {
        let half = c::<T>(0.5);
        let lmu = self.precision.matvec(&omega.mu);
        let quad = dot(&omega.mu, &lmu)
            + self.diag.iter().zip(&omega.rho).map(|(&l, &r)| l * (r + r).exp()).sum::<T>();
        -half * quad + self.log_norm + omega.entropy()
    }

    fn elbo_gradient(&self, omega: &VariationalParams<T>) -> Vec<T> {
        let lmu = self.precision.matvec(&omega.mu);
        let mut g: Vec<T> = lmu.into_iter().map(|x| -x).collect();
        g.extend(self.diag.iter().zip(&omega.rho).map(|(&l, &r)| T::one() - l * (r + r).exp()));
        g
    }

    fn gradient_lipschitz(&self, omega: &VariationalParams<T>, radius: T) -> T {
        let two = c::<T>(2.0);
        self.diag
            .iter()
            .zip(&omega.rho)
            .map(|(&l, &r)| two * l * (two * (r + radius)).exp())
            .fold(self.lambda_max, T::max)
    }
}
