//! Planning and execution of an experiment.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    invoke_with_retry, Backend, InvocationError, InvocationRequest, InvocationResponse, VirtualPlatform,
};
use crate::model::{
    BenchmarkFailure, BenchmarkId, ExperimentConfig, ExperimentResult, FailureCause, Measurement, Pricing, VersionPair,
};
use crate::seed;
use crate::stats::{analyze, AnalysisError};

/// Invocations running longer than this multiple of the expected duration are abandoned.
pub const STRAGGLER_FACTOR: f64 = 3.0;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("cannot plan an experiment without benchmarks")]
    EmptyPlan,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("result sink failed: {0}")]
    Sink(#[from] std::io::Error),
    #[error("analysis failed: {0}")]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    /// Position in the plan; also the planned call index.
    pub index: usize,
    /// Which of the `call_repeats` calls of its benchmarks this is.
    pub call_repeat: u32,
    pub request: InvocationRequest,
}

impl PlanEntry {
    /// Invocation ids sort in plan order.
    pub fn invocation_id(&self) -> String {
        format!("inv-{:06}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub entries: Vec<PlanEntry>,
    pub total_invocations: usize,
    pub target_results_per_benchmark: u64,
}

/// Lays out `call_repeats` invocations per benchmark, shuffled under the
/// experiment seed or interleaved round-robin.
pub fn build_plan(config: &ExperimentConfig, benchmarks: &[BenchmarkId]) -> Result<ExecutionPlan, OrchestratorError> {
    if benchmarks.is_empty() {
        return Err(OrchestratorError::EmptyPlan);
    }
    if config.call_repeats == 0 || config.in_call_repeats == 0 || config.benchmarks_per_call == 0 {
        return Err(OrchestratorError::Config("repeat counts must be positive".into()));
    }
    let group = config.benchmarks_per_call as usize;
    let groups: Vec<&[BenchmarkId]> = benchmarks.chunks(group).collect();

    let mut units: Vec<(u32, &[BenchmarkId])> = Vec::with_capacity(groups.len() * config.call_repeats as usize);
    for call in 0..config.call_repeats {
        for g in &groups {
            units.push((call, g));
        }
    }
    if config.randomize_call_order {
        units.shuffle(&mut seed::rng(seed::derive(config.seed, &["plan"])));
    }

    let entries: Vec<PlanEntry> = units
        .into_iter()
        .enumerate()
        .map(|(index, (call, group))| {
            let mut labels: Vec<&str> = vec!["request"];
            labels.extend(group.iter().map(BenchmarkId::as_str));
            let call_label = call.to_string();
            labels.push(&call_label);
            PlanEntry {
                index,
                call_repeat: call,
                request: InvocationRequest {
                    benchmarks: group.to_vec(),
                    in_call_repeats: config.in_call_repeats,
                    randomize_version_order: config.randomize_version_order,
                    randomize_benchmark_order: config.randomize_benchmark_order,
                    timeout_s: config.per_benchmark_timeout_s,
                    request_seed: seed::derive(config.seed, &labels),
                },
            }
        })
        .collect();
    Ok(ExecutionPlan {
        total_invocations: entries.len(),
        entries,
        target_results_per_benchmark: config.target_results_per_benchmark(),
    })
}

/// GB-second billing plus a per-request fee.
pub fn estimate_cost(total_invocations: usize, pricing: &Pricing, expected_invocation_s: f64, memory_mb: u32) -> f64 {
    let n = total_invocations as f64;
    let gb_s = n * expected_invocation_s * (f64::from(memory_mb) / 1024.0);
    gb_s * pricing.price_per_gb_s + n * pricing.price_per_request
}

pub fn plan_cost(plan: &ExecutionPlan, config: &ExperimentConfig) -> f64 {
    estimate_cost(
        plan.total_invocations,
        &config.pricing,
        config.expected_invocation_s,
        config.memory_mb,
    )
}

/// Emitted once per completed (or abandoned) invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub event: String,
    pub index: usize,
    pub invocation_id: String,
    pub benchmarks: Vec<BenchmarkId>,
    pub instance_id: Option<String>,
    pub cold_start: Option<bool>,
    pub attempts: u32,
    pub measurements: usize,
    pub failures: usize,
    pub completed: usize,
    pub total: usize,
    pub in_flight: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config: ExperimentConfig,
    pub versions: VersionPair,
    pub benchmarks: Vec<BenchmarkId>,
    pub started_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFooter {
    pub finished_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

/// Receives results as they arrive.
pub trait ResultSink {
    fn begin(&mut self, _header: &RunHeader) -> std::io::Result<()> {
        Ok(())
    }
    fn measurement(&mut self, m: &Measurement) -> std::io::Result<()>;
    fn failure(&mut self, f: &BenchmarkFailure) -> std::io::Result<()>;
    fn progress(&mut self, _event: &ProgressEvent) -> std::io::Result<()> {
        Ok(())
    }
    fn finish(&mut self, _footer: &RunFooter) -> std::io::Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl ResultSink for NullSink {
    fn measurement(&mut self, _: &Measurement) -> std::io::Result<()> {
        Ok(())
    }
    fn failure(&mut self, _: &BenchmarkFailure) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionStats {
    pub peak_in_flight: usize,
    pub invocations_completed: usize,
    pub invocation_errors: usize,
    pub abandoned: usize,
    pub retries: usize,
    pub cold_starts: usize,
    /// Cold starts among the first `max_parallelism` planned invocations.
    pub first_wave_cold: usize,
    pub first_wave_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub result: ExperimentResult,
    pub stats: ExecutionStats,
}

enum Completion {
    Done(InvocationResponse, u32),
    Failed(InvocationError, u32),
    Abandoned(String),
}

/// Collects results and failures while keeping the sink in step.
struct Recorder<'a> {
    sink: &'a mut dyn ResultSink,
    plan: &'a ExecutionPlan,
    measurements: Vec<Measurement>,
    failures: Vec<BenchmarkFailure>,
    stats: ExecutionStats,
    consecutive_errors: u32,
    max_parallelism: usize,
}

impl Recorder<'_> {
    fn record(&mut self, entry_index: usize, completion: Completion, in_flight: usize) -> std::io::Result<()> {
        let entry = &self.plan.entries[entry_index];
        let invocation_id = entry.invocation_id();
        let mut event = ProgressEvent {
            event: "invocation_complete".into(),
            index: entry.index,
            invocation_id: invocation_id.clone(),
            benchmarks: entry.request.benchmarks.clone(),
            instance_id: None,
            cold_start: None,
            attempts: 0,
            measurements: 0,
            failures: 0,
            completed: 0,
            total: self.plan.total_invocations,
            in_flight,
            error: None,
        };
        let whole_invocation_failure = |cause: FailureCause, detail: &str| {
            let invocation_id = &invocation_id;
            entry
                .request
                .benchmarks
                .iter()
                .flat_map(|b| {
                    (0..entry.request.in_call_repeats).map(move |r| BenchmarkFailure {
                        benchmark: b.clone(),
                        invocation_id: invocation_id.clone(),
                        repeat_index: Some(r),
                        cause,
                        detail: detail.to_owned(),
                    })
                })
                .collect::<Vec<_>>()
        };
        let (measurements, failures) = match completion {
            Completion::Done(resp, attempts) => {
                self.consecutive_errors = 0;
                self.stats.retries += attempts as usize - 1;
                if resp.cold_start {
                    self.stats.cold_starts += 1;
                }
                if entry.index < self.max_parallelism {
                    self.stats.first_wave_size += 1;
                    self.stats.first_wave_cold += usize::from(resp.cold_start);
                }
                event.instance_id = Some(resp.instance_id.clone());
                event.cold_start = Some(resp.cold_start);
                event.attempts = attempts;
                let measurements: Vec<Measurement> = resp
                    .measurements
                    .into_iter()
                    .map(|mut m| {
                        m.invocation_id = invocation_id.clone();
                        m
                    })
                    .collect();
                let failures: Vec<BenchmarkFailure> = resp
                    .failures
                    .into_iter()
                    .map(|mut f| {
                        f.invocation_id = invocation_id.clone();
                        f
                    })
                    .collect();
                (measurements, failures)
            }
            Completion::Failed(err, attempts) => {
                self.consecutive_errors += 1;
                self.stats.invocation_errors += 1;
                self.stats.retries += attempts as usize - 1;
                event.event = "invocation_failed".into();
                event.attempts = attempts;
                event.error = Some(err.to_string());
                (
                    Vec::new(),
                    whole_invocation_failure(FailureCause::InvocationFailed, &err.to_string()),
                )
            }
            Completion::Abandoned(detail) => {
                self.stats.abandoned += 1;
                event.event = "invocation_abandoned".into();
                event.error = Some(detail.clone());
                (Vec::new(), whole_invocation_failure(FailureCause::Abandoned, &detail))
            }
        };
        for m in &measurements {
            self.sink.measurement(m)?;
        }
        for f in &failures {
            self.sink.failure(f)?;
        }
        self.stats.invocations_completed += 1;
        event.measurements = measurements.len();
        event.failures = failures.len();
        event.completed = self.stats.invocations_completed;
        self.sink.progress(&event)?;
        self.measurements.extend(measurements);
        self.failures.extend(failures);
        Ok(())
    }

    fn abort_reason(&self, threshold: u32) -> Option<String> {
        (threshold > 0 && self.consecutive_errors >= threshold).then(|| {
            format!(
                "{} consecutive invocations failed; backend unavailable",
                self.consecutive_errors
            )
        })
    }
}

/// Runs `plan` against `backend` with at most `max_parallelism` invocations in flight.
pub fn execute(
    plan: &ExecutionPlan,
    backend: Arc<dyn Backend>,
    config: &ExperimentConfig,
    versions: &VersionPair,
    benchmarks: &[BenchmarkId],
    sink: &mut dyn ResultSink,
) -> Result<ExecutionOutcome, OrchestratorError> {
    let mut benchmarks = benchmarks.to_vec();
    benchmarks.sort();
    benchmarks.dedup();
    let virtual_epoch = backend.as_virtual().map(|v| v.epoch());
    let started_at = virtual_epoch.unwrap_or_else(Utc::now);
    sink.begin(&RunHeader {
        config: config.clone(),
        versions: versions.clone(),
        benchmarks: benchmarks.clone(),
        started_at,
    })?;

    let mut recorder = Recorder {
        sink,
        plan,
        measurements: Vec::new(),
        failures: Vec::new(),
        stats: ExecutionStats::default(),
        consecutive_errors: 0,
        max_parallelism: config.max_parallelism as usize,
    };

    let (finished_at, aborted) = match backend.as_virtual() {
        Some(platform) => {
            let (end_s, aborted) = run_virtual(plan, platform, config, &mut recorder)?;
            let end = started_at + chrono::Duration::nanoseconds((end_s * 1e9).round() as i64);
            (end, aborted)
        }
        None => {
            let aborted = run_live(plan, Arc::clone(&backend), config, &mut recorder)?;
            (Utc::now(), aborted)
        }
    };
    recorder.sink.finish(&RunFooter {
        finished_at,
        aborted: aborted.clone(),
    })?;

    let Recorder {
        measurements,
        failures,
        stats,
        ..
    } = recorder;
    let analysis = analyze(config, &benchmarks, &measurements, &failures)?;
    Ok(ExecutionOutcome {
        result: ExperimentResult {
            config: config.clone(),
            versions: versions.clone(),
            benchmarks,
            measurements,
            failures,
            stats: analysis.stats,
            started_at,
            finished_at,
            aborted,
        },
        stats,
    })
}

/// Discrete-event loop on the platform's virtual clock.
fn run_virtual(
    plan: &ExecutionPlan,
    platform: &dyn VirtualPlatform,
    config: &ExperimentConfig,
    recorder: &mut Recorder<'_>,
) -> Result<(f64, Option<String>), OrchestratorError> {
    let max_in_flight = config.max_parallelism as usize;
    let deadline_s = STRAGGLER_FACTOR * config.expected_invocation_s;
    // (finish time bits, dispatch order) -> completion
    let mut in_flight: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut pending: HashMap<usize, Completion> = HashMap::new();
    let mut now = 0.0f64;
    let mut end = 0.0f64;

    let pop = |in_flight: &mut BinaryHeap<Reverse<(u64, usize)>>,
               pending: &mut HashMap<usize, Completion>,
               recorder: &mut Recorder<'_>|
     -> Result<f64, OrchestratorError> {
        let Reverse((bits, idx)) = in_flight.pop().expect("non-empty");
        let completion = pending.remove(&idx).expect("pending completion");
        recorder.record(idx, completion, in_flight.len())?;
        Ok(f64::from_bits(bits))
    };

    for entry in &plan.entries {
        while let Some(Reverse((bits, _))) = in_flight.peek() {
            if in_flight.len() < max_in_flight && f64::from_bits(*bits) > now {
                break;
            }
            let t = pop(&mut in_flight, &mut pending, recorder)?;
            now = now.max(t);
            if let Some(reason) = recorder.abort_reason(config.abort_after_invocation_errors) {
                return Ok((now, Some(reason)));
            }
        }
        let (outcome, attempts) = invoke_with_retry(&entry.request, |req| platform.invoke_at(req, now));
        let (finish, completion) = match outcome {
            Ok(resp) if resp.duration_s > deadline_s => (
                now + deadline_s,
                Completion::Abandoned(format!("exceeded {deadline_s}s straggler deadline")),
            ),
            Ok(resp) => (now + resp.duration_s, Completion::Done(resp, attempts)),
            Err(e) => (now, Completion::Failed(e, attempts)),
        };
        end = end.max(finish);
        pending.insert(entry.index, completion);
        in_flight.push(Reverse((finish.to_bits(), entry.index)));
        recorder.stats.peak_in_flight = recorder.stats.peak_in_flight.max(in_flight.len());
    }
    while !in_flight.is_empty() {
        pop(&mut in_flight, &mut pending, recorder)?;
        if let Some(reason) = recorder.abort_reason(config.abort_after_invocation_errors) {
            return Ok((end, Some(reason)));
        }
    }
    Ok((end, None))
}

/// Real-time loop: one thread per in-flight invocation.
fn run_live(
    plan: &ExecutionPlan,
    backend: Arc<dyn Backend>,
    config: &ExperimentConfig,
    recorder: &mut Recorder<'_>,
) -> Result<Option<String>, OrchestratorError> {
    let max_in_flight = config.max_parallelism as usize;
    let deadline = Duration::from_secs_f64(STRAGGLER_FACTOR * config.expected_invocation_s);
    let (tx, rx) = mpsc::channel::<(usize, Result<InvocationResponse, InvocationError>, u32)>();
    let mut in_flight: HashMap<usize, Instant> = HashMap::new();
    let mut next = 0;

    loop {
        while in_flight.len() < max_in_flight && next < plan.entries.len() {
            let entry = &plan.entries[next];
            let request = entry.request.clone();
            let backend = Arc::clone(&backend);
            let tx = tx.clone();
            let index = entry.index;
            thread::spawn(move || {
                let (outcome, attempts) = invoke_with_retry(&request, |req| backend.invoke(req));
                let _ = tx.send((index, outcome, attempts));
            });
            in_flight.insert(index, Instant::now() + deadline);
            recorder.stats.peak_in_flight = recorder.stats.peak_in_flight.max(in_flight.len());
            next += 1;
        }
        if in_flight.is_empty() {
            return Ok(None);
        }
        let nearest = in_flight.values().min().copied().expect("non-empty");
        match rx.recv_timeout(nearest.saturating_duration_since(Instant::now())) {
            Ok((index, outcome, attempts)) => {
                // late replies of abandoned invocations are dropped
                if in_flight.remove(&index).is_some() {
                    let completion = match outcome {
                        Ok(resp) => Completion::Done(resp, attempts),
                        Err(e) => Completion::Failed(e, attempts),
                    };
                    recorder.record(index, completion, in_flight.len())?;
                }
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                let now = Instant::now();
                let expired: Vec<usize> = in_flight.iter().filter(|(_, d)| **d <= now).map(|(i, _)| *i).collect();
                for index in expired {
                    in_flight.remove(&index);
                    let detail = format!("exceeded {:?} straggler deadline", deadline);
                    recorder.record(index, Completion::Abandoned(detail), in_flight.len())?;
                }
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => unreachable!("sender held by loop"),
        }
        if let Some(reason) = recorder.abort_reason(config.abort_after_invocation_errors) {
            return Ok(Some(reason));
        }
    }
}
