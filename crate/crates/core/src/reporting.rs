//! Result files and reports.
//!
//! A run streams to `results.jsonl`: a header line, then measurement and
//! failure lines in arrival order, then a footer. Reports are derived from
//! that file alone, so re-analysing it reproduces them exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    BenchmarkFailure, BenchmarkId, BenchmarkStats, Classification, ExclusionReason, ExperimentConfig, ExperimentResult,
    Measurement, VersionPair,
};
use crate::orchestrator::{estimate_cost, ResultSink, RunFooter, RunHeader};
use crate::stats::{analyze, AnalysisError, ComparisonReport, RepeatsStudy, Verdict};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CDF_CHANGES_FILE: &str = "cdf_changes.csv";
pub const CDF_NOCHANGES_FILE: &str = "cdf_nochanges.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const REPEATS_CSV_FILE: &str = "repeats.csv";
pub const REPEATS_JSON_FILE: &str = "repeats.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {detail}")]
    Schema { line: usize, detail: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Header(Box<RunHeader>),
    Failure(BenchmarkFailure),
    Footer(RunFooter),
}

/// Streams a run to JSON lines, flushing after every record.
pub struct JsonlWriter<W: Write> {
    out: W,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn line<T: Serialize>(&mut self, value: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

impl<W: Write> ResultSink for JsonlWriter<W> {
    fn begin(&mut self, header: &RunHeader) -> io::Result<()> {
        self.line(&Record::Header(Box::new(header.clone())))
    }

    fn measurement(&mut self, m: &Measurement) -> io::Result<()> {
        self.line(m)
    }

    fn failure(&mut self, f: &BenchmarkFailure) -> io::Result<()> {
        self.line(&Record::Failure(f.clone()))
    }

    fn finish(&mut self, footer: &RunFooter) -> io::Result<()> {
        self.line(&Record::Footer(footer.clone()))
    }
}

/// Writes a finished result in the streaming format.
pub fn write_results(result: &ExperimentResult, path: &Path) -> Result<(), ReportError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = JsonlWriter::new(BufWriter::new(file));
    let mut write = || -> io::Result<()> {
        w.begin(&RunHeader {
            config: result.config.clone(),
            versions: result.versions.clone(),
            benchmarks: result.benchmarks.clone(),
            started_at: result.started_at,
        })?;
        for m in &result.measurements {
            w.measurement(m)?;
        }
        for f in &result.failures {
            w.failure(f)?;
        }
        w.finish(&RunFooter {
            finished_at: result.finished_at,
            aborted: result.aborted.clone(),
        })
    };
    write().map_err(io_err(path))
}

/// Reads a results file and recomputes the statistics from its raw lines.
pub fn load_results(path: &Path) -> Result<ExperimentResult, ReportError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_results(BufReader::new(file)).map_err(|e| match e {
        ReportError::Io { source, .. } => io_err(path)(source),
        other => other,
    })
}

pub fn parse_results(reader: impl BufRead) -> Result<ExperimentResult, ReportError> {
    let mut header: Option<RunHeader> = None;
    let mut footer: Option<RunFooter> = None;
    let mut measurements = Vec::new();
    let mut failures = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| ReportError::Io {
            path: "<results>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |detail: String| ReportError::Schema { line: line_no, detail };
        let value: Value = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        if footer.is_some() {
            return Err(schema("content after footer".into()));
        }
        if value.get("type").is_none() {
            if header.is_none() {
                return Err(schema("measurement before header".into()));
            }
            measurements.push(serde_json::from_value::<Measurement>(value).map_err(|e| schema(e.to_string()))?);
            continue;
        }
        match serde_json::from_value::<Record>(value).map_err(|e| schema(e.to_string()))? {
            Record::Header(h) if header.is_none() && line_no == 1 => header = Some(*h),
            Record::Header(_) => return Err(schema("header must be the first line".into())),
            Record::Failure(_) if header.is_none() => return Err(schema("failure before header".into())),
            Record::Failure(f) => failures.push(f),
            Record::Footer(f) => footer = Some(f),
        }
    }
    let header = header.ok_or_else(|| ReportError::Schema {
        line: 0,
        detail: "missing header".into(),
    })?;
    header
        .config
        .validate_parameters()
        .map_err(|e| ReportError::Invalid(e.to_string()))?;
    let (finished_at, aborted) = match footer {
        Some(f) => (f.finished_at, f.aborted),
        None => (
            measurements
                .iter()
                .map(|m| m.wall_time)
                .max()
                .unwrap_or(header.started_at),
            Some("results file has no footer; run did not finish".to_owned()),
        ),
    };
    let analysis = analyze(&header.config, &header.benchmarks, &measurements, &failures)?;
    Ok(ExperimentResult {
        config: header.config,
        versions: header.versions,
        benchmarks: header.benchmarks,
        measurements,
        failures,
        stats: analysis.stats,
        started_at: header.started_at,
        finished_at,
        aborted,
    })
}

/// Rounds to four decimal places; `-0.0` becomes `0.0`.
pub fn round4(x: f64) -> f64 {
    let r = (x * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round4).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Same value with every float rounded to four decimals.
pub fn rounded<T: Serialize + DeserializeOwned>(x: &T) -> T {
    let mut v = serde_json::to_value(x).expect("report types serialize");
    round_value(&mut v);
    serde_json::from_value(v).expect("rounding keeps the shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub benchmarks: usize,
    pub change_positive: usize,
    pub change_negative: usize,
    pub no_change: usize,
    pub excluded: usize,
    /// Median of |median_diff_pct| over benchmarks classified as changed.
    pub median_abs_change_pct: Option<f64>,
}

impl Summary {
    pub fn changes(&self) -> usize {
        self.change_positive + self.change_negative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfExport {
    pub label: String,
    /// Sorted |median_diff_pct| values.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: ExperimentConfig,
    pub versions: VersionPair,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub duration_s: f64,
    pub planned_invocations: usize,
    pub measurements: usize,
    pub failures: usize,
    pub cost_estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub analysis: Vec<BenchmarkStats>,
    pub summary: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonReport>,
    pub cdf_exports: Vec<CdfExport>,
    pub run_metadata: RunMetadata,
}

pub const CDF_CHANGES: &str = "changes";
pub const CDF_NOCHANGES: &str = "nochanges";

impl ReportBundle {
    pub fn cdf(&self, label: &str) -> Option<&CdfExport> {
        self.cdf_exports.iter().find(|c| c.label == label)
    }
}

fn median_of(mut values: Vec<f64>) -> Option<f64> {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(values[n / 2]),
        _ => Some((values[n / 2 - 1] + values[n / 2]) / 2.0),
    }
}

pub fn summarize(stats: &[BenchmarkStats]) -> Summary {
    let count = |c: Classification| stats.iter().filter(|s| s.classification == c).count();
    Summary {
        benchmarks: stats.len(),
        change_positive: count(Classification::ChangePositive),
        change_negative: count(Classification::ChangeNegative),
        no_change: count(Classification::NoChange),
        excluded: count(Classification::Excluded),
        median_abs_change_pct: median_of(
            stats
                .iter()
                .filter(|s| s.classification.is_change())
                .map(|s| s.median_diff_pct.abs())
                .collect(),
        ),
    }
}

fn cdf(stats: &[BenchmarkStats], label: &str, keep: impl Fn(Classification) -> bool) -> CdfExport {
    let mut values: Vec<f64> = stats
        .iter()
        .filter(|s| keep(s.classification))
        .map(|s| s.median_diff_pct.abs())
        .collect();
    values.sort_by(f64::total_cmp);
    CdfExport {
        label: label.to_owned(),
        values,
    }
}

pub fn planned_invocations(config: &ExperimentConfig, benchmarks: usize) -> usize {
    let per_call = (config.benchmarks_per_call as usize).max(1);
    benchmarks.div_ceil(per_call) * config.call_repeats as usize
}

/// Assembles the report of a finished run with all figures at four decimals.
pub fn build_bundle(result: &ExperimentResult, comparison: Option<ComparisonReport>) -> ReportBundle {
    let analysis: Vec<BenchmarkStats> = rounded(&result.stats);
    let planned = planned_invocations(&result.config, result.benchmarks.len());
    let config = &result.config;
    let duration_s = (result.finished_at - result.started_at).num_milliseconds() as f64 / 1000.0;
    ReportBundle {
        summary: rounded(&summarize(&result.stats)),
        comparison: comparison.as_ref().map(rounded),
        cdf_exports: vec![
            cdf(&analysis, CDF_CHANGES, Classification::is_change),
            cdf(&analysis, CDF_NOCHANGES, |c| c == Classification::NoChange),
        ],
        analysis,
        run_metadata: RunMetadata {
            config: config.clone(),
            versions: result.versions.clone(),
            started_at: result.started_at,
            finished_at: result.finished_at,
            duration_s: round4(duration_s),
            planned_invocations: planned,
            measurements: result.measurements.len(),
            failures: result.failures.len(),
            cost_estimate: round4(estimate_cost(
                planned,
                &config.pricing,
                config.expected_invocation_s,
                config.memory_mb,
            )),
            aborted: result.aborted.clone(),
        },
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn cdf_csv(export: &CdfExport) -> String {
    let mut out = String::from("abs_median_diff_pct,cumulative_fraction\n");
    let n = export.values.len();
    for (i, v) in export.values.iter().enumerate() {
        let _ = writeln!(out, "{v:.4},{:.4}", (i + 1) as f64 / n as f64);
    }
    out
}

/// Writes `report.json`, both CDF files and `summary.txt` into `dir`.
pub fn write_bundle(bundle: &ReportBundle, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(REPORT_FILE), &to_json(bundle))?;
    let empty = |label: &str| CdfExport {
        label: label.to_owned(),
        values: vec![],
    };
    let changes = bundle.cdf(CDF_CHANGES).cloned().unwrap_or_else(|| empty(CDF_CHANGES));
    let nochanges = bundle
        .cdf(CDF_NOCHANGES)
        .cloned()
        .unwrap_or_else(|| empty(CDF_NOCHANGES));
    write_file(&dir.join(CDF_CHANGES_FILE), &cdf_csv(&changes))?;
    write_file(&dir.join(CDF_NOCHANGES_FILE), &cdf_csv(&nochanges))?;
    let rendered = render_summary(bundle, bundle.run_metadata.config.gate_pct);
    write_file(&dir.join(SUMMARY_FILE), &rendered.text)
}

pub fn write_report(result: &ExperimentResult, dir: &Path) -> Result<ReportBundle, ReportError> {
    let bundle = build_bundle(result, None);
    write_bundle(&bundle, dir)?;
    Ok(bundle)
}

pub fn load_report(path: &Path) -> Result<ReportBundle, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bundle: ReportBundle = serde_json::from_str(&text).map_err(|e| ReportError::Schema {
        line: e.line(),
        detail: e.to_string(),
    })?;
    let mut ids: Vec<&BenchmarkId> = bundle.analysis.iter().map(|s| &s.benchmark).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(ReportError::Invalid(format!(
            "{}: duplicate benchmark in analysis",
            path.display()
        )));
    }
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateDecision {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSummary {
    pub text: String,
    pub decision: GateDecision,
    /// Regressions above the gate.
    pub flagged: Vec<BenchmarkId>,
}

/// Benchmarks whose regression exceeds `gate_pct`.
pub fn gated_regressions(stats: &[BenchmarkStats], gate_pct: f64) -> Vec<BenchmarkId> {
    stats
        .iter()
        .filter(|s| s.classification == Classification::ChangePositive && s.median_diff_pct > gate_pct)
        .map(|s| s.benchmark.clone())
        .collect()
}

fn exclusion_text(reason: Option<ExclusionReason>) -> &'static str {
    match reason {
        Some(ExclusionReason::AllRunsFailed) => "excluded: all runs failed",
        _ => "excluded: too few results",
    }
}

/// Text table with one row per benchmark and the gate recommendation.
pub fn render_summary(bundle: &ReportBundle, gate_pct: f64) -> RenderedSummary {
    let flagged = gated_regressions(&bundle.analysis, gate_pct);
    let level = bundle.run_metadata.config.ci_level * 100.0;
    let width = bundle
        .analysis
        .iter()
        .map(|s| s.benchmark.as_str().len())
        .max()
        .unwrap_or(0)
        .max("benchmark".len());
    let ci_header = format!("{level}% CI");
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>5}  {:>10}  {:<22}  classification",
        "benchmark", "n", "median %", ci_header
    );
    for s in &bundle.analysis {
        let mark = if flagged.contains(&s.benchmark) {
            "  <- above gate"
        } else {
            ""
        };
        if s.classification == Classification::Excluded {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>10}  {:<22}  {}",
                s.benchmark,
                s.n,
                "-",
                "-",
                exclusion_text(s.exclusion_reason)
            );
        } else {
            let ci = format!("[{:.4}, {:.4}]", s.ci_low_pct, s.ci_high_pct);
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>10.4}  {:<22}  {}{mark}",
                s.benchmark,
                s.n,
                s.median_diff_pct,
                ci,
                s.classification.label()
            );
        }
    }
    let sum = &bundle.summary;
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{} benchmarks: {} changed (+{} / -{}), {} unchanged, {} excluded",
        sum.benchmarks,
        sum.changes(),
        sum.change_positive,
        sum.change_negative,
        sum.no_change,
        sum.excluded
    );
    if let Some(m) = sum.median_abs_change_pct {
        let _ = writeln!(out, "median |change| among changed: {m:.4}%");
    }
    let meta = &bundle.run_metadata;
    let _ = writeln!(
        out,
        "{} planned invocations, {} measurements, {} failures, estimated cost {:.4}",
        meta.planned_invocations, meta.measurements, meta.failures, meta.cost_estimate
    );
    if let Some(reason) = &meta.aborted {
        let _ = writeln!(out, "ABORTED: {reason}");
    }
    let decision = if flagged.is_empty() {
        GateDecision::Pass
    } else {
        GateDecision::Fail
    };
    match decision {
        GateDecision::Pass => {
            let _ = writeln!(out, "gate {gate_pct:.4}%: pass");
        }
        GateDecision::Fail => {
            let _ = writeln!(
                out,
                "gate {gate_pct:.4}%: fail ({} regressions above gate)",
                flagged.len()
            );
        }
    }
    RenderedSummary {
        text: out,
        decision,
        flagged,
    }
}

fn fmt_fraction(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_owned(), |v| format!("{:.4}%", v * 100.0))
}

pub fn render_comparison(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} benchmarks compared", report.compared_n);
    for (label, v) in [
        ("agree, change", Verdict::AgreeChange),
        ("agree, no change", Verdict::AgreeNoChange),
        ("disagree on direction", Verdict::DisagreeDirection),
        ("disagree on detection", Verdict::DisagreeDetection),
    ] {
        let _ = writeln!(out, "  {label:<22} {}", report.count(v));
    }
    let _ = writeln!(
        out,
        "agreement             {}",
        fmt_fraction(Some(report.agreement_fraction))
    );
    let _ = writeln!(
        out,
        "one-sided coverage AB {}",
        fmt_fraction(report.one_sided_coverage_ab)
    );
    let _ = writeln!(
        out,
        "one-sided coverage BA {}",
        fmt_fraction(report.one_sided_coverage_ba)
    );
    let _ = writeln!(out, "two-sided coverage    {}", fmt_fraction(report.two_sided_coverage));
    if !report.possible_changes.is_empty() {
        let _ = writeln!(out, "possible changes:");
        for p in &report.possible_changes {
            let _ = writeln!(out, "  {}  {:.4}%", p.benchmark, p.magnitude_pct);
        }
    }
    out
}

/// Writes `comparison.json`; returns the rounded report.
pub fn write_comparison(report: &ComparisonReport, dir: &Path) -> Result<ComparisonReport, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let report = rounded(report);
    write_file(&dir.join(COMPARISON_FILE), &to_json(&report))?;
    Ok(report)
}

pub fn repeats_csv(study: &RepeatsStudy) -> String {
    let mut out = String::from("k,fraction\n");
    for p in &study.curve {
        let _ = writeln!(out, "{},{:.4}", p.k, p.fraction);
    }
    out
}

/// Writes the curve as `repeats.csv` and per-benchmark detail as `repeats.json`.
pub fn write_repeats(study: &RepeatsStudy, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(REPEATS_CSV_FILE), &repeats_csv(study))?;
    write_file(&dir.join(REPEATS_JSON_FILE), &to_json(&rounded(study)))
}
