use std::fs;
use std::sync::Arc;

use elastibench::backends::http::{FunctionServer, HttpBackend};
use elastibench::backends::sim::{Simulator, SimulatorScenario, SyntheticSuite};
use elastibench::backends::Backend;
use elastibench::model::{Classification, ExperimentConfig, VersionPair};
use elastibench::orchestrator::{build_plan, execute, ExecutionOutcome, NullSink};
use elastibench::reporting::{
    load_report, load_results, render_summary, write_report, write_results, GateDecision, JsonlWriter, REPORT_FILE,
    RESULTS_FILE, SUMMARY_FILE,
};
use elastibench::stats::{compare_experiments, repeats_for_ci_size};

fn scenario() -> SimulatorScenario {
    SimulatorScenario::synthetic(&SyntheticSuite {
        count: 12,
        changed: 4,
        effect_pct: 8.0,
        seed: 8,
    })
}

fn run(backend: Arc<dyn Backend>, sink: &mut dyn elastibench::orchestrator::ResultSink) -> ExecutionOutcome {
    let scenario = scenario();
    let config = ExperimentConfig::default();
    let benchmarks = scenario.benchmark_ids();
    let plan = build_plan(&config, &benchmarks).unwrap();
    execute(
        &plan,
        backend,
        &config,
        &VersionPair::new("a", "b").unwrap(),
        &benchmarks,
        sink,
    )
    .unwrap()
}

#[test]
fn streamed_results_reanalyse_to_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut sink = JsonlWriter::new(Vec::new());
    let out = run(Arc::new(Simulator::new(scenario(), 2048)), &mut sink);
    let path = dir.path().join(RESULTS_FILE);
    fs::write(&path, sink.into_inner()).unwrap();

    let loaded = load_results(&path).unwrap();
    assert_eq!(loaded, out.result);

    let direct = dir.path().join("direct");
    let reloaded = dir.path().join("reloaded");
    write_report(&out.result, &direct).unwrap();
    write_report(&loaded, &reloaded).unwrap();
    for f in [REPORT_FILE, SUMMARY_FILE] {
        assert_eq!(
            fs::read(direct.join(f)).unwrap(),
            fs::read(reloaded.join(f)).unwrap(),
            "{f}"
        );
    }

    // rewriting the loaded result reproduces the streamed file
    let rewritten = dir.path().join("rewritten.jsonl");
    write_results(&loaded, &rewritten).unwrap();
    assert_eq!(fs::read(&rewritten).unwrap(), fs::read(&path).unwrap());

    let bundle = load_report(&direct.join(REPORT_FILE)).unwrap();
    let positives = out
        .result
        .stats
        .iter()
        .filter(|s| s.classification == Classification::ChangePositive)
        .count();
    assert_eq!(bundle.summary.change_positive, positives);
    assert!(positives >= 4);
    assert_eq!(render_summary(&bundle, 3.0).decision, GateDecision::Fail);
    assert_eq!(render_summary(&bundle, 20.0).decision, GateDecision::Pass);
}

#[test]
fn http_backend_matches_in_process_simulator() {
    let server = FunctionServer::start("127.0.0.1:0", Arc::new(Simulator::new(scenario(), 2048))).unwrap();
    let over_http = run(Arc::new(HttpBackend::new(server.url(), 30.0)), &mut NullSink);
    // The simulator behind HTTP runs on its own sequential clock, so compare
    // decisions rather than raw timings.
    let local = run(Arc::new(Simulator::new(scenario(), 2048)), &mut NullSink);
    assert_eq!(over_http.result.measurements.len(), local.result.measurements.len());
    for (h, l) in over_http.result.stats.iter().zip(&local.result.stats) {
        assert_eq!(h.benchmark, l.benchmark);
        assert_eq!(h.n, 45);
        if scenario().benchmark(&h.benchmark).unwrap().true_effect_pct > 0.0 {
            assert_eq!(h.classification, Classification::ChangePositive, "{}", h.benchmark);
            assert_eq!(l.classification, Classification::ChangePositive, "{}", h.benchmark);
        }
    }
}

#[test]
fn self_comparison_and_self_reference() {
    let out = run(Arc::new(Simulator::new(scenario(), 2048)), &mut NullSink);
    let report = compare_experiments(&out.result.stats, &out.result.stats).unwrap();
    assert_eq!(report.agreement_fraction, 1.0);
    assert_eq!(report.two_sided_coverage, Some(1.0));
    assert!(report.possible_changes.is_empty());

    let pairing = elastibench::model::pair_measurements(&out.result.measurements).unwrap();
    let study = repeats_for_ci_size(&out.result.config, &pairing, &out.result.stats).unwrap();
    assert_eq!(study.eligible_count(), 12);
    assert_eq!(study.curve.last().unwrap().fraction, 1.0);
    assert!(study.curve.windows(2).all(|w| w[0].fraction <= w[1].fraction));
}
