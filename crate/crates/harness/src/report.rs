//! Median-run comparison built from persisted traces and summaries.
//!
//! Per model: the median run of each method is the one with the middle final
//! ELBO; the threshold is the worse median final ELBO minus one nat; the
//! time to threshold is the oracle-call count from which the smoothed trace
//! never drops below it again.

use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use trustvi::trace::{Summary, TraceRecord};

use crate::io::{load_run, StoredRun};
use crate::plan::{ExperimentPlan, Method};

/// Nats subtracted from the worse median final ELBO.
pub const THRESHOLD_MARGIN: f64 = 1.0;
/// Pairs solved by every method in fewer iterations are left out of the
/// runtime comparison.
pub const MIN_ITERATIONS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub completed_runs: usize,
    pub failed_runs: Vec<usize>,
    pub median_rep: Option<usize>,
    pub median_seed: Option<u64>,
    /// `None` when the median run has no finite final ELBO.
    pub median_final_elbo: Option<f64>,
    pub median_diverged: bool,
    pub calls_to_threshold: Option<u64>,
    pub iterations_to_threshold: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub baseline: Method,
    /// Baseline calls to threshold over TrustVI calls to threshold.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub threshold: Option<f64>,
    pub methods: Vec<MethodReport>,
    pub speedups: Vec<Speedup>,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub budget: u64,
    pub repetitions: usize,
    pub master_seed: u64,
    pub models: Vec<ModelReport>,
}

impl ComparisonReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }
}

impl ModelReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn speedup(&self, baseline: Method) -> Option<f64> {
        self.speedups.iter().find(|s| s.baseline == baseline).and_then(|s| s.ratio)
    }
}

fn score(s: &Summary) -> f64 {
    if s.diverged || s.final_elbo.is_nan() {
        f64::NEG_INFINITY
    } else {
        s.final_elbo
    }
}

/// Index into `runs` of the median by final ELBO. Diverged runs rank
/// lowest; for an even count the lower middle is taken; ties go to the
/// earlier repetition.
pub fn median_index(runs: &[(usize, &Summary)]) -> Option<usize> {
    if runs.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| score(runs[a].1).total_cmp(&score(runs[b].1)).then(runs[a].0.cmp(&runs[b].0)));
    Some(order[(runs.len() - 1) / 2])
}

/// Centered 3-point moving median of the trace ELBO estimates. The two end
/// windows hold two points and take the smaller. Non-finite estimates count
/// as `-inf`.
pub fn smoothed_elbo(trace: &[TraceRecord]) -> Vec<f64> {
    let v: Vec<f64> = trace.iter().map(|r| if r.elbo_est.is_nan() { f64::NEG_INFINITY } else { r.elbo_est }).collect();
    let n = v.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            let mut w: Vec<f64> = v[lo..=hi].to_vec();
            w.sort_by(f64::total_cmp);
            if w.len() == 3 {
                w[1]
            } else {
                w[0]
            }
        })
        .collect()
}

/// First point after which the smoothed trace stays at or above
/// `threshold`: `(cumulative oracle calls, iterations)` at that point.
pub fn time_to_threshold(trace: &[TraceRecord], threshold: f64) -> Option<(u64, u64)> {
    let sm = smoothed_elbo(trace);
    let first = match sm.iter().rposition(|&x| x < threshold) {
        Some(j) => j + 1,
        None => 0,
    };
    (first < trace.len()).then(|| (trace[first].cum_oracle_calls, first as u64 + 1))
}

pub fn speedup_ratio(baseline_calls: Option<u64>, method_calls: Option<u64>) -> Option<f64> {
    match (baseline_calls, method_calls) {
        (Some(b), Some(m)) if m > 0 => Some(b as f64 / m as f64),
        _ => None,
    }
}

struct Loaded {
    method: Method,
    done: Vec<(usize, Summary, Vec<TraceRecord>)>,
    failed: Vec<usize>,
}

/// Report for one model from runs already in memory.
fn model_report(model: &str, loaded: Vec<Loaded>) -> ModelReport {
    let medians: Vec<Option<usize>> = loaded
        .iter()
        .map(|l| {
            let view: Vec<(usize, &Summary)> = l.done.iter().map(|(r, s, _)| (*r, s)).collect();
            median_index(&view)
        })
        .collect();
    let finite_medians = loaded
        .iter()
        .zip(&medians)
        .filter_map(|(l, m)| m.map(|i| score(&l.done[i].1)))
        .filter(|x| x.is_finite());
    let worse = finite_medians.fold(f64::INFINITY, f64::min);
    let threshold = worse.is_finite().then(|| worse - THRESHOLD_MARGIN);

    let methods: Vec<MethodReport> = loaded
        .iter()
        .zip(&medians)
        .map(|(l, &mi)| {
            let med = mi.map(|i| &l.done[i]);
            let hit = match (med, threshold) {
                (Some((_, s, t)), Some(th)) if !s.diverged => time_to_threshold(t, th),
                _ => None,
            };
            MethodReport {
                method: l.method,
                completed_runs: l.done.len(),
                failed_runs: l.failed.clone(),
                median_rep: med.map(|m| m.0),
                median_seed: med.map(|m| m.1.seed),
                median_final_elbo: med.map(|m| score(&m.1)).filter(|x| x.is_finite()),
                median_diverged: med.is_some_and(|m| m.1.diverged),
                calls_to_threshold: hit.map(|h| h.0),
                iterations_to_threshold: hit.map(|h| h.1),
            }
        })
        .collect();

    let trust_calls = methods.iter().find(|m| m.method == Method::Trustvi).map(|m| m.calls_to_threshold);
    let speedups = match trust_calls {
        Some(tc) => methods
            .iter()
            .filter(|m| m.method != Method::Trustvi)
            .map(|m| Speedup { baseline: m.method, ratio: speedup_ratio(m.calls_to_threshold, tc) })
            .collect(),
        None => Vec::new(),
    };
    let excluded = !methods.is_empty()
        && methods.iter().all(|m| m.iterations_to_threshold.is_some_and(|it| it < MIN_ITERATIONS));
    ModelReport { model: model.to_string(), threshold, methods, speedups, excluded }
}

/// Assemble the report from the files under `out`. Only persisted artifacts
/// are read, so regenerating it later gives the same bytes.
pub fn build_report(plan: &ExperimentPlan, out: &Path) -> Result<ComparisonReport> {
    let mut models = Vec::new();
    for model in &plan.models {
        let mut loaded = Vec::new();
        for &method in &plan.methods {
            let mut l = Loaded { method, done: Vec::new(), failed: Vec::new() };
            for rep in 0..plan.repetitions {
                match load_run(out, model, method, rep)? {
                    StoredRun::Done { summary, trace } => l.done.push((rep, summary, trace)),
                    StoredRun::Failed(_) | StoredRun::Missing => l.failed.push(rep),
                }
            }
            loaded.push(l);
        }
        models.push(model_report(model, loaded));
    }
    Ok(ComparisonReport { budget: plan.budget, repetitions: plan.repetitions, master_seed: plan.master_seed, models })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: u64, cum: u64, elbo: f64) -> TraceRecord {
        TraceRecord {
            iter: i,
            cum_oracle_calls: cum,
            elbo_est: elbo,
            delta: f64::NAN,
            m_prime: f64::NAN,
            ell_prime: f64::NAN,
            n_assess: 0,
            sigma_hat: f64::NAN,
            accepted: true,
            grad_calls: 1,
            hvp_calls: 0,
            assess_calls: 0,
            wall_time: 0.0,
        }
    }

    fn trace(elbos: &[f64]) -> Vec<TraceRecord> {
        elbos.iter().enumerate().map(|(i, &e)| rec(i as u64, 10 * (i as u64 + 1), e)).collect()
    }

    fn summary(seed: u64, elbo: f64, diverged: bool) -> Summary {
        Summary {
            model: "m".into(),
            method: "trustvi".into(),
            seed,
            final_elbo: elbo,
            total_oracle_calls: 0,
            accept_rate: 0.5,
            diverged,
        }
    }

    #[test]
    fn single_run_is_its_own_median() {
        let s = summary(1, -3.0, false);
        assert_eq!(median_index(&[(0, &s)]), Some(0));
    }

    #[test]
    fn median_ranks_divergence_lowest() {
        let ss = [summary(0, -1.0, false), summary(1, -5.0, false), summary(2, 0.0, true)];
        let view: Vec<_> = ss.iter().enumerate().collect();
        assert_eq!(median_index(&view), Some(1));
        let ss = [summary(0, -1.0, false), summary(1, -5.0, false), summary(2, -2.0, false)];
        let view: Vec<_> = ss.iter().enumerate().collect();
        assert_eq!(median_index(&view), Some(2));
    }

    #[test]
    fn a_single_outlier_does_not_break_the_suffix() {
        let t = trace(&[-10.0, -5.0, -1.0, -1.0, -9.0, -1.0, -1.0]);
        assert_eq!(time_to_threshold(&t, -2.0), Some((30, 3)));
        let t = trace(&[-10.0, -5.0, -1.0, -1.0, -9.0, -9.0, -1.0, -1.0]);
        assert_eq!(time_to_threshold(&t, -2.0), Some((70, 7)));
    }

    #[test]
    fn ending_below_never_reaches() {
        let t = trace(&[-10.0, -1.0, -1.0, -5.0]);
        assert_eq!(time_to_threshold(&t, -2.0), None);
        assert_eq!(time_to_threshold(&[], -2.0), None);
    }

    #[test]
    fn nan_estimates_count_as_below() {
        let t = trace(&[-1.0, -1.0, f64::NAN, f64::NAN, -1.0, -1.0]);
        assert_eq!(time_to_threshold(&t, -2.0), Some((50, 5)));
    }

    #[test]
    fn self_comparison_has_unit_speedup() {
        let t = trace(&[-10.0, -4.0, -2.5, -1.5, -1.0, -1.0]);
        let a = time_to_threshold(&t, -2.0).map(|x| x.0);
        assert_eq!(speedup_ratio(a, a), Some(1.0));
    }

    #[test]
    fn threshold_is_worse_median_minus_one_nat() {
        let mk = |method, elbos: &[f64]| Loaded {
            method,
            done: elbos
                .iter()
                .enumerate()
                .map(|(r, &e)| (r, summary(r as u64, e, false), trace(&[-20.0, -20.0, -20.0, -20.0, -20.0, e, e, e])))
                .collect(),
            failed: vec![],
        };
        let r = model_report("m", vec![mk(Method::Trustvi, &[-3.0, -2.0, -1.0]), mk(Method::Advi, &[-6.0, -4.0, -5.0])]);
        assert_eq!(r.threshold, Some(-6.0));
        assert_eq!(r.method(Method::Trustvi).unwrap().median_final_elbo, Some(-2.0));
        assert_eq!(r.method(Method::Advi).unwrap().median_rep, Some(2));
        assert_eq!(r.speedup(Method::Advi), Some(1.0));
        assert!(!r.excluded);
    }

    #[test]
    fn quick_pairs_are_excluded() {
        let mk = |method| Loaded {
            method,
            done: vec![(0, summary(0, -1.0, false), trace(&[-1.0, -1.0, -1.0]))],
            failed: vec![],
        };
        let r = model_report("m", vec![mk(Method::Trustvi), mk(Method::Advi)]);
        assert!(r.excluded);
    }
}
