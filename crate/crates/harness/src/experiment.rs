//! Executing plans.

use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use trustvi::baselines::{advi_optimize, hfsgvi_optimize};
use trustvi::optimizer::optimize;
use trustvi::trace::RunResult;
use trustvi::zoo;

use crate::io;
use crate::plan::{ExperimentPlan, Method};
use crate::report::{build_report, ComparisonReport};
use crate::seeds::run_seed;

/// One run of `method` on `model` with the plan's settings, `seed` and
/// `budget`.
pub fn run_single(plan: &ExperimentPlan, model: &str, method: Method, seed: u64, budget: u64) -> Result<RunResult> {
    let zm = zoo::by_name::<f64>(model)?;
    let m = zm.model();
    let run = match method {
        Method::Trustvi => {
            let cfg = trustvi::optimizer::OptimizerConfig { seed, budget, ..plan.trustvi.clone() };
            optimize(m, &cfg)?
        }
        Method::Advi => {
            let cfg = trustvi::baselines::AdviConfig { seed, budget, ..plan.advi.clone() };
            advi_optimize(m, &cfg)?
        }
        Method::Hfsgvi => {
            let cfg = trustvi::baselines::NewtonBaselineConfig { seed, budget, ..plan.hfsgvi.clone() };
            hfsgvi_optimize(m, &cfg)?
        }
    };
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey<'a> {
    pub model: &'a str,
    pub method: Method,
    pub rep: usize,
}

pub fn run_keys(plan: &ExperimentPlan) -> Vec<RunKey<'_>> {
    let mut keys = Vec::new();
    for model in &plan.models {
        for &method in &plan.methods {
            for rep in 0..plan.repetitions {
                keys.push(RunKey { model, method, rep });
            }
        }
    }
    keys
}

/// Run every (model, method, repetition) of the plan, persist each result
/// under `out`, then assemble the report from the persisted files only.
/// A failed run is recorded next to the others and does not stop the plan.
pub fn run_experiment(plan: &ExperimentPlan, out: &Path) -> Result<ComparisonReport> {
    plan.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    run_keys(plan).par_iter().try_for_each(|k| -> Result<()> {
        let seed = run_seed(plan.master_seed, k.model, k.method, k.rep);
        match run_single(plan, k.model, k.method, seed, plan.budget) {
            Ok(run) => io::write_run(out, k.method, k.rep, &run),
            Err(e) => {
                log::warn!("{} {} rep {}: {e:#}", k.model, k.method, k.rep);
                io::write_failure(out, k.model, k.method, k.rep, &format!("{e:#}"))
            }
        }
    })?;
    let report = build_report(plan, out)?;
    io::write_json(&io::report_path(out), &report)?;
    Ok(report)
}
