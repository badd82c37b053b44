use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_elastibench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn elastibench")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A simulator config generated by the `scenario` subcommand.
fn sim_config(dir: &Path, name: &str, count: usize, changed: usize, effect: f64, seed: u64) -> PathBuf {
    let out = run(&[
        "scenario",
        "--count",
        &count.to_string(),
        "--changed",
        &changed.to_string(),
        "--effect-pct",
        &effect.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(code(&out), 0);
    let file = dir.join(name);
    fs::write(&file, out.stdout).unwrap();
    file
}

fn edit(file: &Path, f: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(file).unwrap()).unwrap();
    f(&mut v);
    fs::write(file, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn plan_prints_totals_and_writes_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = sim_config(tmp.path(), "c.json", 106, 0, 0.0, 1);
    let out = run(&["plan", "--config", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(code(&out), 0);
    assert!(
        stdout(&out).starts_with("1590 invocations, 45 results/benchmark"),
        "{}",
        stdout(&out)
    );
    let plan: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["total_invocations"], 1590);

    let out = run(&[
        "plan",
        "--config",
        path(&cfg),
        "--repeats-in-call",
        "1",
        "--call-repeats",
        "45",
    ]);
    assert!(
        stdout(&out).starts_with("4770 invocations, 45 results/benchmark"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn invalid_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("local.json");
    fs::write(
        &cfg,
        json!({
            "experiment": {"backend": {"kind": "local", "adapter": {
                "executable_path": "/nonexistent/adapter",
                "v1_dir": path(tmp.path()),
                "v2_dir": "/"
            }}},
            "versions": {"v1_ref": "a", "v2_ref": "b"}
        })
        .to_string(),
    )
    .unwrap();
    let out = run(&["plan", "--config", path(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));

    let typo = sim_config(tmp.path(), "typo.json", 4, 0, 0.0, 1);
    edit(&typo, |v| v["experiment"]["call_repeat"] = json!(3));
    assert_eq!(code(&run(&["plan", "--config", path(&typo)])), 2);

    assert_eq!(
        code(&run(&["plan", "--config", path(&tmp.path().join("missing.json"))])),
        2
    );
    assert_eq!(code(&run(&["run", "--config"])), 2);
}

#[test]
fn run_exit_codes_follow_the_gate() {
    let tmp = tempfile::tempdir().unwrap();
    let aa = sim_config(tmp.path(), "aa.json", 20, 0, 0.0, 3);
    let out = run(&[
        "run",
        "--config",
        path(&aa),
        "--out",
        path(&tmp.path().join("aa")),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("gate 3.0000%: pass"));

    let delta = sim_config(tmp.path(), "d.json", 20, 5, 10.0, 3);
    let out_dir = tmp.path().join("d");
    let out = run(&["run", "--config", path(&delta), "--out", path(&out_dir), "--quiet"]);
    assert_eq!(code(&out), 1, "{}", stdout(&out));
    for f in [
        "plan.json",
        "results.jsonl",
        "report.json",
        "cdf_changes.csv",
        "cdf_nochanges.csv",
        "summary.txt",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    // raising the gate above the injected effect passes
    let out = run(&[
        "analyze",
        "--results",
        path(&out_dir.join("results.jsonl")),
        "--out",
        path(&tmp.path().join("g")),
        "--gate-pct",
        "50",
    ]);
    assert_eq!(code(&out), 0);
}

#[test]
fn progress_events_stream_to_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = sim_config(tmp.path(), "c.json", 2, 0, 0.0, 3);
    let out = run(&["run", "--config", path(&cfg), "--out", path(&tmp.path().join("o"))]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let events: Vec<Value> = stderr.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events.len(), 30);
    assert!(events.iter().all(|e| e["event"] == "invocation_complete"));
    assert_eq!(events.last().unwrap()["completed"], 30);
}

#[test]
fn analyze_reproduces_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = sim_config(tmp.path(), "c.json", 10, 3, 6.0, 5);
    let run_dir = tmp.path().join("run");
    let re_dir = tmp.path().join("re");
    let first = run(&["run", "--config", path(&cfg), "--out", path(&run_dir), "--quiet"]);
    let second = run(&[
        "analyze",
        "--results",
        path(&run_dir.join("results.jsonl")),
        "--out",
        path(&re_dir),
    ]);
    assert_eq!(code(&first), code(&second));
    for f in ["report.json", "cdf_changes.csv", "cdf_nochanges.csv", "summary.txt"] {
        assert_eq!(
            fs::read(run_dir.join(f)).unwrap(),
            fs::read(re_dir.join(f)).unwrap(),
            "{f}"
        );
    }

    // determinism across runs
    let again = tmp.path().join("again");
    run(&["run", "--config", path(&cfg), "--out", path(&again), "--quiet"]);
    for f in ["results.jsonl", "report.json"] {
        assert_eq!(
            fs::read(run_dir.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn analyze_rejects_malformed_results() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"benchmark\":\"A\"}\n").unwrap();
    let out = run(&["analyze", "--results", path(&bad), "--out", path(tmp.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn nine_results_are_excluded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = sim_config(tmp.path(), "c.json", 1, 1, 10.0, 5);
    let dir = tmp.path().join("o");
    let out = run(&[
        "run",
        "--config",
        path(&cfg),
        "--out",
        path(&dir),
        "--quiet",
        "--call-repeats",
        "3",
    ]);
    assert_eq!(code(&out), 0);
    let out = run(&[
        "analyze",
        "--results",
        path(&dir.join("results.jsonl")),
        "--out",
        path(&dir),
    ]);
    let row = stdout(&out)
        .lines()
        .find(|l| l.starts_with("Benchmark000/cfg_0"))
        .unwrap()
        .to_owned();
    assert!(
        row.contains("    9  ") && row.contains("excluded: too few results"),
        "{row}"
    );
}

#[test]
fn compare_and_repeats_against_self() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = sim_config(tmp.path(), "c.json", 8, 2, 10.0, 9);
    let dir = tmp.path().join("o");
    run(&["run", "--config", path(&cfg), "--out", path(&dir), "--quiet"]);
    let report = dir.join("report.json");

    let out = run(&[
        "compare",
        "--a",
        path(&report),
        "--b",
        path(&report),
        "--out",
        path(&tmp.path().join("cmp")),
    ]);
    assert_eq!(code(&out), 0);
    let cmp: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("cmp/comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["agreement_fraction"], 1.0);
    assert_eq!(cmp["two_sided_coverage"], 1.0);

    let out = run(&[
        "repeats",
        "--results",
        path(&dir.join("results.jsonl")),
        "--reference",
        path(&report),
        "--out",
        path(&tmp.path().join("rep")),
    ]);
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(tmp.path().join("rep/repeats.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,fraction"));
    assert_eq!(csv.lines().last(), Some("45,1.0000"));

    let out = run(&[
        "compare",
        "--a",
        path(&report),
        "--b",
        path(&dir.join("summary.txt")),
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(code(&out), 2);
}

fn closed_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("http.json");
    fs::write(
        &cfg,
        json!({
            "experiment": {"max_parallelism": 4, "backend": {"kind": "http"}},
            "versions": {"v1_ref": "a", "v2_ref": "b"},
            "benchmarks": ["Benchmark000/cfg_0", "Benchmark000/cfg_1", "Benchmark001/cfg_0"]
        })
        .to_string(),
    )
    .unwrap();
    cfg
}

#[test]
fn unreachable_endpoint_aborts_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = http_config(tmp.path());
    let dir = tmp.path().join("o");
    let out = bin()
        .args(["run", "--config", path(&cfg), "--out", path(&dir), "--quiet"])
        .env("ELASTIBENCH_ENDPOINT", format!("http://127.0.0.1:{}", closed_port()))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", stdout(&out));
    assert!(stdout(&out).contains("ABORTED"));
    let results = fs::read_to_string(dir.join("results.jsonl")).unwrap();
    assert!(results.lines().last().unwrap().contains("\"aborted\""));

    // without an endpoint the config is invalid
    let out = bin()
        .args(["plan", "--config", path(&cfg)])
        .env_remove("ELASTIBENCH_ENDPOINT")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn served_simulator_runs_over_http() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = sim_config(tmp.path(), "sim.json", 4, 2, 10.0, 2);
    let mut server = bin()
        .args(["serve", "--config", path(&sim), "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line.trim().strip_prefix("serving ").unwrap().to_owned();

    let cfg = http_config(tmp.path());
    edit(&cfg, |v| {
        v["benchmarks"] = json!([
            "Benchmark000/cfg_0",
            "Benchmark000/cfg_1",
            "Benchmark001/cfg_0",
            "Benchmark001/cfg_1"
        ])
    });
    let out = bin()
        .args([
            "run",
            "--config",
            path(&cfg),
            "--out",
            path(&tmp.path().join("o")),
            "--quiet",
            "--backend",
            "http",
        ])
        .env("ELASTIBENCH_ENDPOINT", &url)
        .output()
        .unwrap();
    server.kill().unwrap();
    let _ = server.wait();
    assert_eq!(code(&out), 1, "{}", stdout(&out));
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["change_positive"], 2);
}
