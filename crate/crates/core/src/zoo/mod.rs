//! Analytic Bayesian test problems.
//!
//! Every model ships analytic gradients and Hessian-vector products on an
//! unconstrained parameterization. Data are simulated from fixed seeds.

mod funnel;
mod gaussian;
mod logistic;
mod regression;
mod variance_components;

use std::sync::Arc;

pub use funnel::{funnel, Funnel};
pub use gaussian::{gaussian_posterior, GaussianPosterior, Precision};
pub use logistic::{logistic_regression, LogisticRegression};
pub use regression::{bayes_linear_regression, LinearRegression};
pub use variance_components::{hierarchical_variance_components, VarianceComponents};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vi::{ModelSpec, VariationalParams};

/// Closed-form ELBO of a model under the mean-field Gaussian family.
pub trait AnalyticElbo<T: Scalar>: Send + Sync {
    fn elbo(&self, omega: &VariationalParams<T>) -> T;

    /// Exact gradient in flat `[mu, rho]` layout.
    fn elbo_gradient(&self, omega: &VariationalParams<T>) -> Vec<T>;

    /// Upper bound on the spectral norm of the exact ELBO Hessian over the
    /// ball of `radius` around `omega`; a local Lipschitz constant of the
    /// gradient.
    fn gradient_lipschitz(&self, omega: &VariationalParams<T>, radius: T) -> T;
}

/// Known structure of a zoo model, where available.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth<T> {
    pub posterior_mean: Option<Vec<T>>,
    pub posterior_cov_diag: Option<Vec<T>>,
    pub posterior_mode: Option<Vec<T>>,
    pub log_evidence: Option<T>,
    /// Mean-field optimum `(mu*, rho*)`.
    pub optimum: Option<VariationalParams<T>>,
}

/// A model plus whatever ground truth is known about it.
#[derive(Clone)]
pub struct ZooModel<T: Scalar> {
    pub spec: Arc<dyn ModelSpec<T>>,
    pub truth: GroundTruth<T>,
    pub analytic: Option<Arc<dyn AnalyticElbo<T>>>,
}

impl<T: Scalar> ZooModel<T> {
    pub fn name(&self) -> &str {
        self.spec.name()
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim()
    }

    pub fn model(&self) -> &dyn ModelSpec<T> {
        self.spec.as_ref()
    }
}

impl<T: Scalar> std::fmt::Debug for ZooModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ZooModel")
            .field("name", &self.name())
            .field("latent_dim", &self.latent_dim())
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

/// Registered model names, in listing order.
pub const REGISTRY: &[&str] = &[
    "stdnormal4",
    "gaussian2",
    "gaussian8",
    "gaussian32",
    "linreg",
    "dyes",
    "logistic",
    "funnel10",
    "logistic64",
    "dyes-large",
];

/// Look up a registered model by name.
pub fn by_name<T: Scalar>(name: &str) -> Result<ZooModel<T>> {
    let m = match name {
        "stdnormal4" => gaussian_posterior(4, Precision::Identity)?,
        "gaussian2" => gaussian_posterior(2, Precision::Dense(vec![vec![2.0, 1.0], vec![1.0, 2.0]]))?,
        "gaussian8" => gaussian_posterior(8, Precision::Random { seed: 8 })?,
        "gaussian32" => gaussian_posterior(32, Precision::Random { seed: 32 })?,
        "linreg" => bayes_linear_regression(50, 4, 1)?,
        "dyes" => hierarchical_variance_components(6, 5, 1)?,
        "logistic" => logistic_regression(100, 5, 1)?,
        "funnel10" => funnel(10)?,
        "logistic64" => logistic_regression(400, 64, 2)?,
        "dyes-large" => hierarchical_variance_components(120, 8, 2)?,
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(rename(m, name))
}

fn rename<T: Scalar>(mut m: ZooModel<T>, name: &str) -> ZooModel<T> {
    struct Named<T: Scalar> {
        name: String,
        inner: Arc<dyn ModelSpec<T>>,
    }
    impl<T: Scalar> ModelSpec<T> for Named<T> {
        fn name(&self) -> &str {
            &self.name
        }
        fn latent_dim(&self) -> usize {
            self.inner.latent_dim()
        }
        fn log_density(&self, z: &[T]) -> T {
            self.inner.log_density(z)
        }
        fn log_density_grad(&self, z: &[T], g: &mut [T]) -> T {
            self.inner.log_density_grad(z, g)
        }
        fn hvp_log_density(&self, z: &[T], v: &[T], out: &mut [T]) -> bool {
            self.inner.hvp_log_density(z, v, out)
        }
        fn has_analytic_hvp(&self) -> bool {
            self.inner.has_analytic_hvp()
        }
    }
    if m.spec.name() != name {
        m.spec = Arc::new(Named { name: name.to_string(), inner: m.spec });
    }
    m
}

/// Standard-normal design matrix and coefficient draws shared by the
/// regression models.
pub(crate) fn simulate_normals(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut s = crate::rng::Stream::new(seed, stream);
    (0..n).map(|_| s.standard_normal::<f64>()).collect()
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::rng::Stream;

    /// Central-difference check of `log_density_grad` and `hvp_log_density`
    /// at `points` random locations with scale `spread`.
    pub fn check_derivatives(m: &dyn ModelSpec<f64>, points: usize, spread: f64, seed: u64) {
        let d = m.latent_dim();
        let mut s = Stream::new(seed, 99);
        for _ in 0..points {
            let z: Vec<f64> = (0..d).map(|_| spread * s.standard_normal::<f64>()).collect();
            let mut g = vec![0.0; d];
            m.log_density_grad(&z, &mut g);
            for k in 0..d {
                let h = 1e-5 * (1.0 + z[k].abs());
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += h;
                zm[k] -= h;
                let fd = (m.log_density(&zp) - m.log_density(&zm)) / (2.0 * h);
                let err = (fd - g[k]).abs() / (1.0 + g[k].abs());
                assert!(err <= 1e-5, "{} grad[{k}]: fd {fd} vs {}", m.name(), g[k]);
            }
            let v: Vec<f64> = (0..d).map(|_| s.standard_normal::<f64>()).collect();
            let mut hv = vec![0.0; d];
            assert!(m.hvp_log_density(&z, &v, &mut hv));
            let h = 1e-5;
            let zp: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let zm: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let (mut gp, mut gm) = (vec![0.0; d], vec![0.0; d]);
            m.log_density_grad(&zp, &mut gp);
            m.log_density_grad(&zm, &mut gm);
            let scale = hv.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            for k in 0..d {
                let fd = (gp[k] - gm[k]) / (2.0 * h);
                assert!((fd - hv[k]).abs() / scale <= 1e-4, "{} hvp[{k}]: fd {fd} vs {}", m.name(), hv[k]);
            }
            // linearity in v
            let mut hv2 = vec![0.0; d];
            let v2: Vec<f64> = v.iter().map(|x| -2.5 * x).collect();
            m.hvp_log_density(&z, &v2, &mut hv2);
            for k in 0..d {
                assert!((hv2[k] + 2.5 * hv[k]).abs() <= 1e-9 * (1.0 + hv[k].abs()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_every_name() {
        for name in REGISTRY {
            let m = by_name::<f64>(name).unwrap();
            assert_eq!(m.name(), *name);
            assert!(2 * m.latent_dim() <= 512);
        }
        assert!(matches!(by_name::<f64>("nope"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn registry_models_pass_derivative_checks() {
        for name in REGISTRY {
            let m = by_name::<f64>(name).unwrap();
            let spread = if name.starts_with("funnel") { 0.5 } else { 1.0 };
            testing::check_derivatives(m.model(), 3, spread, 11);
        }
    }

    #[test]
    fn gradient_vanishes_at_known_modes() {
        for name in REGISTRY {
            let m = by_name::<f64>(name).unwrap();
            if let Some(mode) = &m.truth.posterior_mode {
                let mut g = vec![0.0; mode.len()];
                m.model().log_density_grad(mode, &mut g);
                assert!(crate::linalg::norm_inf(&g) <= 1e-8, "{name}: {g:?}");
            }
        }
    }

    #[test]
    fn models_are_pure() {
        for name in REGISTRY {
            let m = by_name::<f64>(name).unwrap();
            let z = vec![0.1; m.latent_dim()];
            assert_eq!(m.model().log_density(&z).to_bits(), m.model().log_density(&z).to_bits());
        }
    }
}
