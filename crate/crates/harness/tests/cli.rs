use std::path::Path;
use std::process::{Command, Output};

use trustvi::trace::TRACE_COLUMNS;
use trustvi::zoo::REGISTRY;

fn trustvi(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trustvi"));
    cmd.args(args).env_remove("TRUSTVI_OUT");
    if let Some(p) = env_out {
        cmd.env("TRUSTVI_OUT", p);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_plan(dir: &Path, body: &str) -> String {
    let p = dir.join("plan.json");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const PLAN: &str = r#"{
  "models": ["gaussian2", "stdnormal4"],
  "methods": ["trustvi", "advi"],
  "repetitions": 3,
  "budget": 400,
  "master_seed": 11
}"#;

#[test]
fn list_models_prints_the_registry() {
    let o = trustvi(&["list-models"], None);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().collect::<Vec<_>>(), REGISTRY);
}

#[test]
fn single_run_streams_a_trace() {
    let o = trustvi(&["run", "--model", "gaussian2", "--method", "trustvi", "--budget", "300", "--format", "csv"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), TRACE_COLUMNS.join(","));
    assert!(text.lines().count() > 2);
}

#[test]
fn single_run_summary_keys_are_ordered() {
    let o = trustvi(&["run", "--model", "linreg", "--method", "advi", "--seed", "4", "--budget", "200"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    let keys = ["model", "method", "seed", "final_elbo", "total_oracle_calls", "accept_rate", "diverged"];
    let pos: Vec<usize> = keys.iter().map(|k| text.find(&format!("\"{k}\"")).expect(k)).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{text}");
}

#[test]
fn plan_run_honours_the_output_override_and_report_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), PLAN);
    let requested = dir.path().join("requested");
    let env_dir = dir.path().join("from-env");
    let o = trustvi(&["run", "--plan", &plan, "--out", requested.to_str().unwrap()], Some(&env_dir));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!requested.exists());
    let report = env_dir.join("report.json");
    let first = std::fs::read(&report).unwrap();
    for rep in 0..3 {
        let csv = std::fs::read_to_string(env_dir.join(format!("stdnormal4/advi/rep{rep}.csv"))).unwrap();
        assert_eq!(csv.lines().next().unwrap(), TRACE_COLUMNS.join(","));
        assert!(env_dir.join(format!("gaussian2/trustvi/rep{rep}.json")).exists());
    }
    std::fs::remove_file(&report).unwrap();
    let o = trustvi(&["report", "--plan", &plan], Some(&env_dir));
    assert!(o.status.success());
    assert_eq!(std::fs::read(&report).unwrap(), first);
}

#[test]
fn malformed_plan_is_located() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), "{\n  \"models\": [\"gaussian2\"],\n  \"budget\": \"lots\"\n}");
    let o = trustvi(&["run", "--plan", &plan], None);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("budget") && err.contains("line 3"), "{err}");
}

#[test]
fn check_passes() {
    let o = trustvi(&["check", "--format", "json"], None);
    assert!(o.status.success(), "{}", stdout(&o));
}
