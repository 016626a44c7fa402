//! Per-iteration trace records, run summaries and the trace CSV format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vi::VariationalParams;

/// Column order of the trace CSV.
pub const TRACE_COLUMNS: [&str; 12] = [
    "iter",
    "cum_oracle_calls",
    "elbo_est",
    "delta",
    "m_prime",
    "ell_prime",
    "n_assess",
    "sigma_hat",
    "accepted",
    "grad_calls",
    "hvp_calls",
    "assess_calls",
];

/// One optimizer iteration.
///
/// `elbo_est` is measured at the iterate the iteration ends on, so it pairs
/// with `cum_oracle_calls`. Fields that do not apply to a method are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub cum_oracle_calls: u64,
    pub elbo_est: f64,
    pub delta: f64,
    pub m_prime: f64,
    pub ell_prime: f64,
    pub n_assess: u64,
    pub sigma_hat: f64,
    pub accepted: bool,
    pub grad_calls: u64,
    pub hvp_calls: u64,
    pub assess_calls: u64,
    /// Seconds since the run started. Not persisted, so traces stay
    /// reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl TraceRecord {
    pub fn iteration_calls(&self) -> u64 {
        self.grad_calls + self.hvp_calls + self.assess_calls
    }
}

/// Oracle-call counters, weighted 1 per gradient unit, 2 per Hessian-vector
/// unit and 1 per assessment unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounts {
    pub grad: u64,
    pub hvp: u64,
    pub assess: u64,
}

impl OracleCounts {
    pub fn total(&self) -> u64 {
        self.grad + self.hvp + self.assess
    }

    pub fn add(&mut self, other: OracleCounts) {
        self.grad += other.grad;
        self.hvp += other.hvp;
        self.assess += other.assess;
    }
}

/// Samples per charged call for each estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleUnits {
    pub grad: usize,
    pub hvp: usize,
    pub assess: usize,
}

impl Default for OracleUnits {
    fn default() -> Self {
        Self { grad: 256, hvp: 85, assess: 128 }
    }
}

impl OracleUnits {
    pub fn gradient(&self, n: usize) -> u64 {
        n.div_ceil(self.grad) as u64
    }

    /// Charge for `products` Hessian-vector products on a batch of `n`.
    pub fn hvp(&self, n: usize, products: usize) -> u64 {
        2 * (products as u64) * n.div_ceil(self.hvp) as u64
    }

    pub fn assessment(&self, n: usize) -> u64 {
        n.div_ceil(self.assess) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Budget,
    RadiusCollapse,
    Diverged,
    IterationLimit,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub model: String,
    pub method: String,
    pub seed: u64,
    pub trace: Vec<TraceRecord>,
    pub final_params: VariationalParams<f64>,
    pub final_elbo: f64,
    pub counts: OracleCounts,
    pub accept_rate: f64,
    pub diverged: bool,
    pub termination: Termination,
}

impl RunResult {
    pub fn summary(&self) -> Summary {
        Summary {
            model: self.model.clone(),
            method: self.method.clone(),
            seed: self.seed,
            final_elbo: self.final_elbo,
            total_oracle_calls: self.counts.total(),
            accept_rate: self.accept_rate,
            diverged: self.diverged,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_trace_csv(w, &self.trace)
    }
}

/// Per-run summary as persisted next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub method: String,
    pub seed: u64,
    /// `null` in JSON when the run ended without a finite value.
    #[serde(with = "finite_or_null")]
    pub final_elbo: f64,
    pub total_oracle_calls: u64,
    #[serde(with = "finite_or_null")]
    pub accept_rate: f64,
    pub diverged: bool,
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

fn format_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_trace_csv<W: Write>(w: W, trace: &[TraceRecord]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(TRACE_COLUMNS).map_err(format_err)?;
    for r in trace {
        wr.serialize(r).map_err(format_err)?;
    }
    wr.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Parse a trace CSV, checking the header against [`TRACE_COLUMNS`].
pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<TraceRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(format_err)?.clone();
    if header.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(Error::Format(format!(
            "expected columns {:?}, found {:?}",
            TRACE_COLUMNS,
            header.iter().collect::<Vec<_>>()
        )));
    }
    rd.deserialize().map(|row| row.map_err(format_err)).collect()
}

/// Check the accounting identities of a trace: cumulative calls are the
/// running sum of per-iteration charges and iterations are numbered from 0.
pub fn check_accounting(trace: &[TraceRecord], start: u64) -> Result<()> {
    let mut cum = start;
    for (i, r) in trace.iter().enumerate() {
        if r.iter != i as u64 {
            return Err(Error::Contract(format!("row {i} has iter {}", r.iter)));
        }
        cum += r.iteration_calls();
        if r.cum_oracle_calls != cum {
            return Err(Error::Contract(format!(
                "row {i}: cumulative calls {} but charges sum to {cum}",
                r.cum_oracle_calls
            )));
        }
    }
    Ok(())
}
