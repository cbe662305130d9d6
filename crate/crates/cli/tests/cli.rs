use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn immpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_immpc")).args(args).env_remove("IMMPC_LOG_LEVEL").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Short variant of the bundled sine scenario written to `dir`.
fn short_config(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(scenario("four_tank_sine.cfg")).unwrap()).unwrap();
    v["name"] = Value::from(name);
    v["controller"]["horizon"] = Value::from(15);
    v["sim"]["steps"] = Value::from(30);
    v["sim"]["oracle"] = Value::from(false);
    v["schedule"] = Value::Array(vec![]);
    v["assertions"] = serde_json::json!({ "max_violation": 1e-6, "max_infeasible_steps": 0 });
    edit(&mut v);
    let path = dir.join(format!("{name}.cfg"));
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn simulate_bundled_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = scenario("four_tank_sine.cfg");
    let o = immpc(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("converged: true"));
    let csv = std::fs::read_to_string(out.join("four_tank_sine.csv")).unwrap();
    assert_eq!(csv.lines().count(), 401);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("four_tank_sine.report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], Value::Bool(true));
    assert_eq!(report["passed"], Value::Bool(true));
    assert_eq!(report["steps"], Value::from(400));
    assert_eq!(report["files"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "{\"name\": \"bad\", \"plant\": ").unwrap();
    let out = dir.path().join("out");
    let o = immpc(&["simulate", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    // one good file does not rescue a bad one
    let good = short_config(dir.path(), "good", |_| {});
    let o = immpc(&[
        "simulate",
        "--config",
        good.to_str().unwrap(),
        "--config",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let unknown = short_config(dir.path(), "unknown", |v| v["controller"]["gain"] = Value::from(1.0));
    let o = immpc(&["simulate", "--config", unknown.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dump_qp_writes_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "dump", |_| {});
    let out = dir.path().join("out");
    let o = immpc(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dump-qp", "t=10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dump = std::fs::read_to_string(out.join("dump.qp_t10.txt")).unwrap();
    assert!(!dump.is_empty());
    let o = immpc(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dump-qp", "t=x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "strict", |v| v["assertions"]["final_tracking_tol"] = Value::from(1e-30));
    let out = dir.path().join("out");
    let o = immpc(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("[FAIL] final_tracking"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("strict.report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], Value::Bool(false));
}

#[test]
fn parallel_jobs_match_sequential_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = short_config(dir.path(), "a", |v| v["sim"]["noise"] = Value::from(0.01));
    let b = short_config(dir.path(), "b", |v| v["disturbance"]["w0"][0] = Value::from(-1.0));
    let (seq, par) = (dir.path().join("seq"), dir.path().join("par"));
    let args = |out: &Path, jobs: &str| {
        immpc(&[
            "simulate",
            "--config",
            a.to_str().unwrap(),
            "--config",
            b.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            jobs,
            "--seed-override",
            "11",
        ])
    };
    assert!(args(&seq, "1").status.success());
    assert!(args(&par, "2").status.success());
    for name in ["a", "b"] {
        let read = |d: &Path| {
            let text = std::fs::read_to_string(d.join(format!("{name}.csv"))).unwrap();
            // drop the timing column
            text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>()
        };
        assert_eq!(read(&seq), read(&par), "{name}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(seq.join("a.report.json")).unwrap()).unwrap();
    assert_eq!(report["noisy"], Value::Bool(true));
    let o = immpc(&["simulate", "--config", a.to_str().unwrap(), "--out", seq.to_str().unwrap()]);
    let other: Value = serde_json::from_str(&std::fs::read_to_string(seq.join("a.report.json")).unwrap()).unwrap();
    assert!(o.status.success());
    assert_ne!(report["scenario_hash"], other["scenario_hash"]);
}

#[test]
fn design_summaries() {
    let o = immpc(&["design", "--config", scenario("four_tank_sine.cfg").to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("p = [1, -2.618, 2.618, -1]"), "{text}");
    assert!(text.contains("cancellation check: ok"));
    assert!(text.contains("V_N \u{2261} 0"));
    assert!(text.contains("N=40 > 10: ok"));

    let dir = tempfile::tempdir().unwrap();
    let short = short_config(dir.path(), "short", |v| v["controller"]["horizon"] = Value::from(8));
    let o = immpc(&["design", "--config", short.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("convergence bound violated"));

    let constant = short_config(dir.path(), "constant", |v| {
        v["disturbance"] = serde_json::json!({
            "frequencies": [],
            "include_constant": true,
            "copies": 2,
            "f": [[-1.0, 0.0], [0.0, -1.0]],
            "w0": [1.0, 0.5]
        });
    });
    let o = immpc(&["design", "--config", constant.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("p = [1, -1]"), "{}", stdout(&o));

    let custom = short_config(dir.path(), "custom", |v| {
        v["controller"]["denominator"] = serde_json::json!([1.0, -2.618033988749895, 2.618033988749895, -1.0, 0.0]);
    });
    let o = immpc(&["design", "--config", custom.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn design_flags_cancelling_plant() {
    let dir = tempfile::tempdir().unwrap();
    // integrator plant with a constant disturbance: p(z) shares the root z = 1 with A
    let cfg = short_config(dir.path(), "integrator", |v| {
        v["plant"] = serde_json::json!({ "a": [[1.0]], "b": [[1.0]], "c": [[1.0]] });
        v["constraints"] = serde_json::json!({ "x_lo": [-10.0], "x_hi": [10.0], "u_lo": [-1.0], "u_hi": [1.0] });
        v["disturbance"] = serde_json::json!({ "frequencies": [], "include_constant": true, "e": [[0.0]], "f": [[1.0]], "w0": [1.0] });
    });
    let o = immpc(&["design", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("cancellation check: FAILED"));
}

#[test]
fn verify_suites() {
    let o = immpc(&["verify", "velocity"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["suite"], Value::from("velocity"));
    assert_eq!(v["passed"], Value::Bool(true));

    let o = immpc(&["verify", "theorem1"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["checks"].as_array().unwrap().len(), 20);

    assert_eq!(immpc(&["verify", "nonsense"]).status.code(), Some(2));
}

#[test]
fn rejects_bad_log_level() {
    let o = Command::new(env!("CARGO_BIN_EXE_immpc")).args(["verify", "velocity"]).env("IMMPC_LOG_LEVEL", "loud").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_immpc")).args(["verify", "velocity"]).env("IMMPC_LOG_LEVEL", "debug").output().unwrap();
    assert!(o.status.success());
}

#[test]
fn cli_trace_equals_library_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "lib", |_| {});
    let out = dir.path().join("out");
    assert!(immpc(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let sc = immpc::config::ScenarioConfig::load(&cfg).unwrap().build().unwrap();
    let log = immpc::sim::run(&sc).unwrap();
    let mut lib_csv = Vec::new();
    log.write_csv(&mut lib_csv, false).unwrap();
    let strip = |text: &str| text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    let cli_csv = std::fs::read_to_string(out.join("lib.csv")).unwrap();
    assert_eq!(strip(&cli_csv), strip(&String::from_utf8(lib_csv).unwrap()));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("lib.report.json")).unwrap()).unwrap();
    assert_eq!(report["scenario_hash"], Value::from(sc.hash));
}
