//! Output layout: `<out>/<model>/<method>/rep<i>.csv` for traces,
//! `rep<i>.json` for summaries, `rep<i>.error` for failed runs and
//! `<out>/report.json` for the comparison.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use trustvi::trace::{read_trace_csv, RunResult, Summary, TraceRecord};

use crate::plan::Method;

pub const OUT_ENV: &str = "TRUSTVI_OUT";

/// `TRUSTVI_OUT` wins over `requested`, which wins over `fallback`.
pub fn resolve_out_dir(requested: Option<&Path>, fallback: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => requested.map_or_else(|| fallback.to_path_buf(), Path::to_path_buf),
    }
}

pub fn run_dir(out: &Path, model: &str, method: Method) -> PathBuf {
    out.join(model).join(method.name())
}

pub fn trace_path(out: &Path, model: &str, method: Method, rep: usize) -> PathBuf {
    run_dir(out, model, method).join(format!("rep{rep}.csv"))
}

pub fn summary_path(out: &Path, model: &str, method: Method, rep: usize) -> PathBuf {
    run_dir(out, model, method).join(format!("rep{rep}.json"))
}

pub fn error_path(out: &Path, model: &str, method: Method, rep: usize) -> PathBuf {
    run_dir(out, model, method).join(format!("rep{rep}.error"))
}

pub fn report_path(out: &Path) -> PathBuf {
    out.join("report.json")
}

pub fn write_run(out: &Path, method: Method, rep: usize, run: &RunResult) -> Result<()> {
    let dir = run_dir(out, &run.model, method);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let tp = trace_path(out, &run.model, method, rep);
    run.write_csv(BufWriter::new(File::create(&tp).with_context(|| format!("creating {}", tp.display()))?))?;
    write_json(&summary_path(out, &run.model, method, rep), &run.summary())?;
    let ep = error_path(out, &run.model, method, rep);
    if ep.exists() {
        fs::remove_file(ep)?;
    }
    Ok(())
}

pub fn write_failure(out: &Path, model: &str, method: Method, rep: usize, message: &str) -> Result<()> {
    let dir = run_dir(out, model, method);
    fs::create_dir_all(&dir)?;
    fs::write(error_path(out, model, method, rep), message)?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// A persisted run, or the reason it failed.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredRun {
    Done { summary: Summary, trace: Vec<TraceRecord> },
    Failed(String),
    Missing,
}

pub fn load_run(out: &Path, model: &str, method: Method, rep: usize) -> Result<StoredRun> {
    let ep = error_path(out, model, method, rep);
    if ep.exists() {
        return Ok(StoredRun::Failed(fs::read_to_string(ep)?));
    }
    let sp = summary_path(out, model, method, rep);
    if !sp.exists() {
        return Ok(StoredRun::Missing);
    }
    let summary: Summary = serde_json::from_str(&fs::read_to_string(&sp)?)
        .with_context(|| format!("parsing {}", sp.display()))?;
    let tp = trace_path(out, model, method, rep);
    let trace = read_trace_csv(File::open(&tp).with_context(|| format!("opening {}", tp.display()))?)
        .with_context(|| format!("parsing {}", tp.display()))?;
    Ok(StoredRun::Done { summary, trace })
}
