//! `elastibench`: plan, run and analyse paired benchmark experiments.
//!
//! Exit status: 0 pass, 1 regression above the gate, 2 invalid input,
//! 3 experiment aborted.

mod config;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use elastibench::backends::build_backend;
use elastibench::backends::http::FunctionServer;
use elastibench::backends::sim::{SimulatorScenario, SyntheticSuite};
use elastibench::model::{BackendKind, BackendSettings, ExperimentConfig, VersionPair};
use elastibench::orchestrator::{build_plan, execute, plan_cost, ProgressEvent, ResultSink, RunFooter, RunHeader};
use elastibench::reporting::{
    build_bundle, load_report, load_results, render_comparison, render_summary, write_bundle, write_comparison,
    write_repeats, GateDecision, JsonlWriter, RESULTS_FILE,
};
use elastibench::stats::{compare_experiments, repeats_for_ci_size};
use elastibench::{BenchmarkFailure, ExperimentResult, Measurement};

use crate::config::{CliConfigFile, Overrides};

const PLAN_FILE: &str = "plan.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad config, arguments or input files.
    Invalid(String),
    Io(String),
}

impl CliError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |e| CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<elastibench::reporting::ReportError> for CliError {
    fn from(e: elastibench::reporting::ReportError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "elastibench",
    version,
    about = "Paired microbenchmark experiments on elastic function platforms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write plan.json and print invocation count and cost estimate
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run an experiment and write results and report files
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Do not print progress events to stderr
        #[arg(long)]
        quiet: bool,
    },
    /// Recompute the report from a results file
    Analyze {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gate_pct: Option<f64>,
    },
    /// Agreement and coverage between two reports
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeats needed per benchmark to match a reference CI size
    Repeats {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the configured local or simulated backend over HTTP
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print a simulator config with a synthetic suite
    Scenario {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        changed: usize,
        #[arg(long, default_value_t = 0.0)]
        effect_pct: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("elastibench: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Plan { config, out, overrides } => cmd_plan(&config, out.as_deref(), &overrides),
        Command::Run {
            config,
            out,
            overrides,
            quiet,
        } => cmd_run(&config, &out, &overrides, quiet),
        Command::Analyze { results, out, gate_pct } => cmd_analyze(&results, &out, gate_pct),
        Command::Compare { a, b, out } => cmd_compare(&a, &b, &out),
        Command::Repeats {
            results,
            reference,
            out,
        } => cmd_repeats(&results, &reference, &out),
        Command::Serve {
            config,
            listen,
            overrides,
        } => cmd_serve(&config, &listen, &overrides),
        Command::Scenario {
            count,
            changed,
            effect_pct,
            seed,
        } => cmd_scenario(count, changed, effect_pct, seed),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

fn cmd_plan(config_path: &Path, out: Option<&Path>, overrides: &Overrides) -> Result<u8, CliError> {
    let file = config::load(config_path, overrides)?;
    let benchmarks = config::benchmarks(&file)?;
    let plan = build_plan(&file.experiment, &benchmarks).map_err(|e| CliError::Invalid(e.to_string()))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        write_json(&dir.join(PLAN_FILE), &plan)?;
    }
    println!(
        "{} invocations, {} results/benchmark, {} benchmarks, estimated cost {:.4}",
        plan.total_invocations,
        plan.target_results_per_benchmark,
        benchmarks.len(),
        plan_cost(&plan, &file.experiment)
    );
    Ok(0)
}

/// Results file plus progress lines on stderr.
struct RunSink<W: Write> {
    results: JsonlWriter<W>,
    quiet: bool,
}

impl<W: Write> ResultSink for RunSink<W> {
    fn begin(&mut self, header: &RunHeader) -> io::Result<()> {
        self.results.begin(header)
    }
    fn measurement(&mut self, m: &Measurement) -> io::Result<()> {
        self.results.measurement(m)
    }
    fn failure(&mut self, f: &BenchmarkFailure) -> io::Result<()> {
        self.results.failure(f)
    }
    fn progress(&mut self, event: &ProgressEvent) -> io::Result<()> {
        if !self.quiet {
            let line = serde_json::to_string(event).expect("serializable");
            eprintln!("{line}");
        }
        Ok(())
    }
    fn finish(&mut self, footer: &RunFooter) -> io::Result<()> {
        self.results.finish(footer)
    }
}

fn report_and_exit_code(result: &ExperimentResult, out: &Path) -> Result<u8, CliError> {
    let bundle = build_bundle(result, None);
    write_bundle(&bundle, out)?;
    let rendered = render_summary(&bundle, bundle.run_metadata.config.gate_pct);
    print!("{}", rendered.text);
    Ok(if result.aborted.is_some() {
        3
    } else if rendered.decision == GateDecision::Fail {
        1
    } else {
        0
    })
}

fn cmd_run(config_path: &Path, out: &Path, overrides: &Overrides, quiet: bool) -> Result<u8, CliError> {
    let file = config::load(config_path, overrides)?;
    let benchmarks = config::benchmarks(&file)?;
    let plan = build_plan(&file.experiment, &benchmarks).map_err(|e| CliError::Invalid(e.to_string()))?;
    let backend = build_backend(&file.experiment).map_err(|e| CliError::Invalid(e.to_string()))?;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_json(&out.join(PLAN_FILE), &plan)?;

    let results_path = out.join(RESULTS_FILE);
    let results_file = fs::File::create(&results_path).map_err(CliError::io(&results_path))?;
    let mut sink = RunSink {
        results: JsonlWriter::new(BufWriter::new(results_file)),
        quiet,
    };
    execute(&plan, backend, &file.experiment, &file.versions, &benchmarks, &mut sink)
        .map_err(|e| CliError::Io(e.to_string()))?;
    drop(sink);
    // Report from the file itself so `analyze` reproduces it exactly.
    let result = load_results(&results_path)?;
    report_and_exit_code(&result, out)
}

fn cmd_analyze(results: &Path, out: &Path, gate_pct: Option<f64>) -> Result<u8, CliError> {
    let mut result = load_results(results)?;
    if let Some(gate) = gate_pct {
        result.config.gate_pct = gate;
    }
    report_and_exit_code(&result, out)
}

fn cmd_compare(a: &Path, b: &Path, out: &Path) -> Result<u8, CliError> {
    let a = load_report(a)?;
    let b = load_report(b)?;
    let report = compare_experiments(&a.analysis, &b.analysis).map_err(|e| CliError::Invalid(e.to_string()))?;
    let report = write_comparison(&report, out)?;
    print!("{}", render_comparison(&report));
    Ok(0)
}

fn cmd_repeats(results: &Path, reference: &Path, out: &Path) -> Result<u8, CliError> {
    let full = load_results(results)?;
    let reference = load_report(reference)?;
    let pairing =
        elastibench::model::pair_measurements(&full.measurements).map_err(|e| CliError::Invalid(e.to_string()))?;
    let study = repeats_for_ci_size(&full.config, &pairing, &reference.analysis)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    write_repeats(&study, out)?;
    println!(
        "{} eligible benchmarks, {} skipped",
        study.eligible_count(),
        study.skipped.len()
    );
    for p in study
        .curve
        .iter()
        .filter(|p| p.k % 15 == 0 || Some(p.k) == study.curve.last().map(|l| l.k))
    {
        println!("k={:<4} {:.4}", p.k, p.fraction);
    }
    Ok(0)
}

fn cmd_serve(config_path: &Path, listen: &str, overrides: &Overrides) -> Result<u8, CliError> {
    let file = config::load(config_path, overrides)?;
    if file.experiment.backend.kind == BackendKind::Http {
        return Err(CliError::Invalid("serve needs a local or sim backend".into()));
    }
    let backend = build_backend(&file.experiment).map_err(|e| CliError::Invalid(e.to_string()))?;
    let server =
        FunctionServer::start(listen, Arc::clone(&backend)).map_err(|e| CliError::Io(format!("{listen}: {e}")))?;
    println!("serving {}/invoke", server.url());
    server.join();
    Ok(0)
}

fn cmd_scenario(count: usize, changed: usize, effect_pct: f64, seed: u64) -> Result<u8, CliError> {
    let scenario = SimulatorScenario::synthetic(&SyntheticSuite {
        count,
        changed: changed.min(count),
        effect_pct,
        seed,
    });
    let file = CliConfigFile {
        experiment: ExperimentConfig {
            seed,
            backend: BackendSettings {
                kind: BackendKind::Sim,
                scenario: Some(scenario),
                ..BackendSettings::default()
            },
            ..ExperimentConfig::default()
        },
        versions: VersionPair::new("v1", "v2").map_err(|e| CliError::Invalid(e.to_string()))?,
        benchmarks: None,
    };
    println!("{}", serde_json::to_string_pretty(&file).expect("serializable"));
    Ok(0)
}
