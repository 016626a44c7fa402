//! Reference optimizers sharing the estimators and oracle accounting of the
//! trust-region method.

pub mod advi;
pub mod hfsgvi;

pub use advi::{advi_optimize, AdviConfig};
pub use hfsgvi::{hfsgvi_optimize, NewtonBaselineConfig};
