//! Stochastic trust-region optimization for black-box variational inference.
//!
//! The optimizer fits a mean-field Gaussian `q(z) = N(mu, diag(exp(2 rho)))`
//! to an unnormalized log density by maximizing the ELBO. Each iteration
//! draws a reparameterization-trick gradient and a matrix-free stochastic
//! Hessian, proposes a step by truncated CG inside the trust region, and
//! assesses it with a matched-pairs estimate of the ELBO change whose sample
//! size comes from a Hoeffding bound.
//!
//! Two baselines share the same estimators and cost accounting: an
//! adaptive-step SGD in the style of ADVI ([`baselines::advi`]) and an
//! unsafeguarded stochastic Newton-CG ([`baselines::hfsgvi`]).
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix `f64`.

pub mod assessment;
pub mod baselines;
pub mod error;
pub mod linalg;
pub mod optimizer;
pub mod probe;
pub mod rng;
pub mod scalar;
pub mod subproblem;
pub mod trace;
pub mod vi;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type VariationalParams64 = vi::VariationalParams<f64>;
pub type BaseBatch64 = vi::BaseBatch<f64>;
pub type GradientSample64 = vi::GradientSample<f64>;
pub type ZooModel64 = zoo::ZooModel<f64>;
pub type Step64 = subproblem::Step<f64>;
pub type DenseMatrix64 = linalg::DenseMatrix<f64>;
pub type AssessmentResult64 = assessment::AssessmentResult<f64>;
pub type OptimizerState64 = optimizer::OptimizerState<f64>;
pub type RunResult64 = trace::RunResult;

pub type VariationalParams32 = vi::VariationalParams<f32>;
pub type ZooModel32 = zoo::ZooModel<f32>;
