use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use trustvi::optimizer::{OptimizerConfig, TrustVi};
use trustvi::probe::{theory_probe, FrozenState, ProbeMode};
use trustvi::trace::write_trace_csv;
use trustvi::vi::VariationalParams;
use trustvi::zoo;
use trustvi_harness::check::run_checks;
use trustvi_harness::{build_report, io, run_experiment, run_single, ComparisonReport, ExperimentPlan, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Parser)]
#[command(name = "trustvi", version, about = "Trust-region variational inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a plan file, or a single run given --model and --method.
    Run {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Print the registered model names, one per line.
    ListModels,
    /// Run the estimator and solver self-tests; nonzero exit on any failure.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Replay one iteration from a frozen state and compare against the
    /// per-iteration bounds.
    Probe {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Iterations to run from the standard initialization before freezing.
        #[arg(long, default_value_t = 0)]
        advance: usize,
        /// Trust radius at the frozen state; defaults to the radius reached.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        replications: usize,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Rebuild report.json from the traces and summaries of a plan's output.
    Report {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn report_csv(report: &ComparisonReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "model,method,median_final_elbo,threshold,calls_to_threshold,iterations_to_threshold,speedup,excluded,diverged")?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    let opt_u = |x: Option<u64>| x.map_or_else(String::new, |v| v.to_string());
    for m in &report.models {
        for r in &m.methods {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                m.model,
                r.method,
                opt(r.median_final_elbo),
                opt(m.threshold),
                opt_u(r.calls_to_threshold),
                opt_u(r.iterations_to_threshold),
                opt(m.speedup(r.method)),
                m.excluded,
                r.median_diverged
            )?;
        }
    }
    Ok(())
}

fn plan_out(plan: &ExperimentPlan, out: Option<&Path>) -> PathBuf {
    io::resolve_out_dir(out.or(plan.out_dir.as_deref()), Path::new("results"))
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    plan: Option<PathBuf>,
    model: Option<String>,
    method: Option<Method>,
    seed: u64,
    budget: Option<u64>,
    out: Option<PathBuf>,
    format: Format,
) -> Result<()> {
    let stdout = std::io::stdout().lock();
    if let Some(path) = plan {
        if model.is_some() || method.is_some() {
            bail!("--plan cannot be combined with --model or --method");
        }
        let mut plan = ExperimentPlan::load(&path)?;
        if let Some(b) = budget {
            plan.budget = b;
        }
        let dir = plan_out(&plan, out.as_deref());
        let report = run_experiment(&plan, &dir)?;
        match format {
            Format::Json => serde_json::to_writer_pretty(stdout, &report)?,
            Format::Csv => report_csv(&report, stdout)?,
        }
        eprintln!("wrote {}", dir.display());
        return Ok(());
    }
    let (Some(model), Some(method)) = (model, method) else {
        bail!("give either --plan or both --model and --method");
    };
    let mut plan = ExperimentPlan::new(&[model.as_str()], &[method], budget.unwrap_or(10_000));
    plan.repetitions = 1;
    plan.validate()?;
    let run = run_single(&plan, &model, method, seed, plan.budget)?;
    let requested = out.as_deref();
    if requested.is_some() || std::env::var_os(io::OUT_ENV).is_some() {
        let dir = io::resolve_out_dir(requested, Path::new("results"));
        io::write_run(&dir, method, 0, &run)?;
        eprintln!("wrote {}", io::run_dir(&dir, &model, method).display());
    }
    match format {
        Format::Json => serde_json::to_writer_pretty(stdout, &run.summary())?,
        Format::Csv => write_trace_csv(stdout, &run.trace)?,
    }
    Ok(())
}

fn cmd_probe(model: &str, seed: u64, advance: usize, delta: Option<f64>, replications: usize, format: Format) -> Result<()> {
    let zm = zoo::by_name::<f64>(model)?;
    let cfg = OptimizerConfig { seed, ..OptimizerConfig::default() };
    let opt = TrustVi::new(zm.model(), cfg.clone())?;
    let mut st = opt.initial_state(VariationalParams::standard(zm.latent_dim()))?;
    for _ in 0..advance {
        opt.step(&mut st)?;
    }
    let frozen = FrozenState { omega: st.omega.clone(), delta: delta.unwrap_or(st.delta), n_grad: st.n_grad };
    let r = theory_probe(&zm, &cfg, &frozen, &ProbeMode::FullIteration, replications, seed)
        .context("the probe needs a model with an analytic ELBO")?;
    let stdout = std::io::stdout().lock();
    match format {
        Format::Json => serde_json::to_writer_pretty(stdout, &r)?,
        Format::Csv => {
            let v = serde_json::to_value(&r)?;
            let obj = v.as_object().expect("report is an object");
            let mut w = stdout;
            writeln!(w, "{}", obj.keys().cloned().collect::<Vec<_>>().join(","))?;
            let vals: Vec<String> = obj.values().map(|x| if x.is_null() { String::new() } else { x.to_string() }).collect();
            writeln!(w, "{}", vals.join(","))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { plan, model, method, seed, budget, out, format } => {
            cmd_run(plan, model, method, seed, budget, out, format)
        }
        Command::ListModels => {
            zoo::REGISTRY.iter().for_each(|m| println!("{m}"));
            Ok(())
        }
        Command::Check { seed, format } => {
            let results = run_checks(seed);
            let ok = results.iter().all(|r| r.passed);
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&results).expect("serializable")),
                Format::Csv => {
                    println!("check,passed,detail");
                    for r in &results {
                        println!("{},{},\"{}\"", r.name, r.passed, r.detail);
                    }
                }
            }
            if !ok {
                return ExitCode::FAILURE;
            }
            Ok(())
        }
        Command::Probe { model, seed, advance, delta, replications, format } => {
            cmd_probe(&model, seed, advance, delta, replications, format)
        }
        Command::Report { plan, out } => (|| {
            let plan = ExperimentPlan::load(&plan)?;
            let dir = plan_out(&plan, out.as_deref());
            let report = build_report(&plan, &dir)?;
            io::write_json(&io::report_path(&dir), &report)?;
            serde_json::to_writer_pretty(std::io::stdout().lock(), &report)?;
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
