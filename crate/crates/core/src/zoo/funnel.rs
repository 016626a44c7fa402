use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use crate::vi::ModelSpec;

use super::{GroundTruth, ZooModel};

/// Funnel: `v ~ N(0, 3^2)`, `x_i | v ~ N(0, exp(v)^2)` for `i < d`.
///
/// Normalized, so the log evidence is 0. The minibatch ELBO Hessian at
/// `omega = 0` is indefinite, which makes this the curvature stress test.
#[derive(Debug, Clone)]
pub struct Funnel {
    name: String,
    d: usize,
}

pub fn funnel<T: Scalar>(d: usize) -> Result<ZooModel<T>> {
    if !(2..=256).contains(&d) {
        return Err(Error::Contract(format!("funnel dimension {d} outside 2..=256")));
    }
    let mut mode = vec![T::zero(); d];
    mode[0] = T::lit(-9.0 * (d - 1) as f64);
    let truth = GroundTruth {
        posterior_mean: Some(vec![T::zero(); d]),
        posterior_mode: Some(mode),
        log_evidence: Some(T::zero()),
        ..GroundTruth::default()
    };
    Ok(ZooModel { spec: Arc::new(Funnel { name: format!("funnel{d}"), d }), truth, analytic: None })
}

impl<T: Scalar> ModelSpec<T> for Funnel {
    fn name(&self) -> &str {
        &self.name
    }

    fn latent_dim(&self) -> usize {
        self.d
    }

    fn log_density(&self, z: &[T]) -> T {
        let half = c::<T>(0.5);
        let v = z[0];
        let w = (-(v + v)).exp();
        let k = T::from_usize_lossy(self.d - 1);
        let ln2pi = (c::<T>(2.0) * T::PI()).ln();
        let x2: T = z[1..].iter().map(|&x| x * x).sum();
        -v * v / c(18.0) - half * (c::<T>(18.0) * T::PI()).ln() - half * w * x2 - k * v - k * half * ln2pi
    }

    fn log_density_grad(&self, z: &[T], grad: &mut [T]) -> T {
        let v = z[0];
        let w = (-(v + v)).exp();
        let x2: T = z[1..].iter().map(|&x| x * x).sum();
        grad[0] = -v / c(9.0) - T::from_usize_lossy(self.d - 1) + w * x2;
        for (g, &x) in grad[1..].iter_mut().zip(&z[1..]) {
            *g = -x * w;
        }
        self.log_density(z)
    }

    fn hvp_log_density(&self, z: &[T], vec: &[T], out: &mut [T]) -> bool {
        let v = z[0];
        let w = (-(v + v)).exp();
        let two = c::<T>(2.0);
        let x2: T = z[1..].iter().map(|&x| x * x).sum();
        let cross: T = z[1..].iter().zip(&vec[1..]).map(|(&x, &y)| x * y).sum();
        out[0] = (-T::one() / c(9.0) - two * w * x2) * vec[0] + two * w * cross;
        for i in 1..self.d {
            out[i] = two * z[i] * w * vec[0] - w * vec[i];
        }
        true
    }

    fn has_analytic_hvp(&self) -> bool {
        true
    }
}
