use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use crate::vi::ModelSpec;

use super::{simulate_normals, GroundTruth, ZooModel};

const THETA_PRIOR_VAR: f64 = 100.0;

/// One-way random effects ("variance components") model, centered.
///
/// `y_ij ~ N(theta + u_i, sigma_w)`, `u_i ~ N(0, sigma_b)`. Latent
/// `z = (theta, u_1..u_G, a, b)` with `a = log sigma_b`, `b = log sigma_w`,
/// `theta ~ N(0, 10^2)` and `a, b ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct VarianceComponents<T> {
    name: String,
    groups: usize,
    per_group: usize,
    y: Vec<T>,
}

pub fn hierarchical_variance_components<T: Scalar>(groups: usize, per_group: usize, seed: u64) -> Result<ZooModel<T>> {
    if groups == 0 || per_group == 0 || 2 * (groups + 3) > 512 {
        return Err(Error::Contract(format!("variance components size {groups}x{per_group} out of range")));
    }
    let raw = simulate_normals(seed, 61, groups + groups * per_group);
    let (theta, sigma_b, sigma_w) = (2.0, 1.5, 1.0);
    let y = (0..groups)
        .flat_map(|i| {
            let u = sigma_b * raw[i];
            let raw = &raw;
            (0..per_group).map(move |j| theta + u + sigma_w * raw[groups + i * per_group + j])
        })
        .map(T::lit)
        .collect();
    let model = VarianceComponents { name: format!("dyes-{groups}x{per_group}"), groups, per_group, y };
    Ok(ZooModel { spec: Arc::new(model), truth: GroundTruth::default(), analytic: None })
}

struct Parts<T> {
    theta: T,
    a: T,
    b: T,
    big_b: T,
    w: T,
    /// Residual sums per group.
    rsum: Vec<T>,
    rss: T,
}

impl<T: Scalar> VarianceComponents<T> {
    fn parts(&self, z: &[T]) -> Parts<T> {
        let g = self.groups;
        let theta = z[0];
        let (a, b) = (z[g + 1], z[g + 2]);
        let mut rsum = vec![T::zero(); g];
        let mut rss = T::zero();
        for i in 0..g {
            let u = z[1 + i];
            for j in 0..self.per_group {
                let r = self.y[i * self.per_group + j] - theta - u;
                rsum[i] = rsum[i] + r;
                rss = rss + r * r;
            }
        }
        Parts { theta, a, b, big_b: (-(a + a)).exp(), w: (-(b + b)).exp(), rsum, rss }
    }
}

impl<T: Scalar> ModelSpec<T> for VarianceComponents<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn latent_dim(&self) -> usize {
        self.groups + 3
    }

    fn log_density(&self, z: &[T]) -> T {
        let g = self.groups;
        let p = self.parts(z);
        let half = c::<T>(0.5);
        let ln2pi = (c::<T>(2.0) * T::PI()).ln();
        let n = T::from_usize_lossy(g * self.per_group);
        let gf = T::from_usize_lossy(g);
        let u2: T = z[1..=g].iter().map(|&u| u * u).sum();
        let prior_theta = -half * p.theta * p.theta / c(THETA_PRIOR_VAR) - half * (c::<T>(2.0 * THETA_PRIOR_VAR) * T::PI()).ln();
        let effects = -half * u2 * p.big_b - gf * p.a - gf * half * ln2pi;
        let lik = -half * p.rss * p.w - n * p.b - n * half * ln2pi;
        let hyper = -half * (p.a * p.a + p.b * p.b) - ln2pi;
        prior_theta + effects + lik + hyper
    }

    fn log_density_grad(&self, z: &[T], grad: &mut [T]) -> T {
        let g = self.groups;
        let p = self.parts(z);
        let n = T::from_usize_lossy(g * self.per_group);
        let total_r: T = p.rsum.iter().copied().sum();
        grad[0] = -p.theta / c(THETA_PRIOR_VAR) + p.w * total_r;
        let mut u2 = T::zero();
        for i in 0..g {
            let u = z[1 + i];
            u2 = u2 + u * u;
            grad[1 + i] = -u * p.big_b + p.w * p.rsum[i];
        }
        grad[g + 1] = u2 * p.big_b - T::from_usize_lossy(g) - p.a;
        grad[g + 2] = p.rss * p.w - n - p.b;
        self.log_density(z)
    }

    fn hvp_log_density(&self, z: &[T], v: &[T], out: &mut [T]) -> bool {
        let g = self.groups;
        let p = self.parts(z);
        let two = c::<T>(2.0);
        let ni = T::from_usize_lossy(self.per_group);
        let n = T::from_usize_lossy(g * self.per_group);
        let (vt, va, vb) = (v[0], v[g + 1], v[g + 2]);
        let vu = &v[1..=g];
        let total_r: T = p.rsum.iter().copied().sum();
        let sum_vu: T = vu.iter().copied().sum();
        out[0] = (-T::one() / c(THETA_PRIOR_VAR) - p.w * n) * vt - p.w * ni * sum_vu - two * p.w * total_r * vb;
        let mut a_acc = T::zero();
        let mut b_acc = T::zero();
        let mut u2 = T::zero();
        for i in 0..g {
            let u = z[1 + i];
            u2 = u2 + u * u;
            out[1 + i] = -p.w * ni * vt + (-p.big_b - p.w * ni) * vu[i] + two * u * p.big_b * va - two * p.w * p.rsum[i] * vb;
            a_acc = a_acc + two * u * p.big_b * vu[i];
            b_acc = b_acc + p.rsum[i] * vu[i];
        }
        out[g + 1] = a_acc - (two * p.big_b * u2 + T::one()) * va;
        out[g + 2] = -two * p.w * total_r * vt - two * p.w * b_acc - (two * p.w * p.rss + T::one()) * vb;
        true
    }

    fn has_analytic_hvp(&self) -> bool {
        true
    }
}
