//! Function-invocation abstraction and its implementations.
//!
//! * [`local::LocalBackend`] runs adapters in local worker "instances".
//! * [`sim::Simulator`] is a deterministic virtual FaaS platform.
//! * [`http::HttpBackend`] speaks the JSON wire protocol to a remote function.

pub mod http;
pub mod local;
pub mod sim;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BackendKind, BenchmarkFailure, BenchmarkId, ExperimentConfig, Measurement, Version};
use crate::seed;

/// Retries after the first attempt for retryable invocation errors.
pub const MAX_RETRIES: u32 = 2;

/// Body of `POST /invoke`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvocationRequest {
    pub benchmarks: Vec<BenchmarkId>,
    pub in_call_repeats: u32,
    pub randomize_version_order: bool,
    pub randomize_benchmark_order: bool,
    pub timeout_s: f64,
    pub request_seed: u64,
}

impl InvocationRequest {
    pub fn validate(&self) -> Result<(), InvocationError> {
        if self.benchmarks.is_empty() {
            return Err(InvocationError::protocol("request has no benchmarks"));
        }
        if self.in_call_repeats == 0 {
            return Err(InvocationError::protocol("in_call_repeats must be positive"));
        }
        if !(self.timeout_s > 0.0) {
            return Err(InvocationError::protocol("timeout_s must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationResponse {
    pub instance_id: String,
    pub cold_start: bool,
    pub duration_s: f64,
    pub measurements: Vec<Measurement>,
    #[serde(default)]
    pub failures: Vec<BenchmarkFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvocationErrorKind {
    Transport,
    HttpStatus(u16),
    Protocol,
    Timeout,
    WorkerCrash,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind:?} (retryable: {retryable}): {message}")]
pub struct InvocationError {
    pub kind: InvocationErrorKind,
    pub retryable: bool,
    pub message: String,
}

impl InvocationError {
    pub fn new(kind: InvocationErrorKind, retryable: bool, message: impl Into<String>) -> Self {
        Self {
            kind,
            retryable,
            message: message.into(),
        }
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self::new(InvocationErrorKind::Protocol, false, message)
    }
}

/// Anything that can serve an invocation.
///
/// Implementations must tolerate concurrent `invoke` calls.
pub trait Backend: Send + Sync {
    fn invoke(&self, request: &InvocationRequest) -> Result<InvocationResponse, InvocationError>;

    /// Backends that run on a virtual clock are driven by the orchestrator's
    /// discrete-event loop instead of real threads.
    fn as_virtual(&self) -> Option<&dyn VirtualPlatform> {
        None
    }
}

/// A backend whose invocations happen at caller-chosen virtual times.
pub trait VirtualPlatform: Send + Sync {
    /// Serves `request` starting at `start_s` virtual seconds.
    fn invoke_at(&self, request: &InvocationRequest, start_s: f64) -> Result<InvocationResponse, InvocationError>;

    fn epoch(&self) -> chrono::DateTime<chrono::Utc>;
}

/// Seed for the `attempt`-th retry of a request.
pub fn retry_seed(request_seed: u64, attempt: u32) -> u64 {
    if attempt == 0 {
        request_seed
    } else {
        seed::derive_index(request_seed, "retry", u64::from(attempt))
    }
}

/// Calls `invoke` until success, a non-retryable error, or retries run out.
///
/// Returns the outcome and the number of attempts made.
pub fn invoke_with_retry<F>(
    request: &InvocationRequest,
    mut invoke: F,
) -> (Result<InvocationResponse, InvocationError>, u32)
where
    F: FnMut(&InvocationRequest) -> Result<InvocationResponse, InvocationError>,
{
    let mut attempt = 0;
    loop {
        let mut req = request.clone();
        req.request_seed = retry_seed(request.request_seed, attempt);
        match invoke(&req) {
            Err(e) if e.retryable && attempt < MAX_RETRIES => attempt += 1,
            outcome => return (outcome, attempt + 1),
        }
    }
}

/// One benchmark-version pair slot inside an invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledPair {
    pub repeat_index: u32,
    pub benchmark: BenchmarkId,
    pub order: [Version; 2],
}

/// Execution order inside one invocation: repeats outermost, then benchmarks,
/// each running both versions back to back. Driven only by `request_seed`.
pub fn schedule(request: &InvocationRequest) -> Vec<ScheduledPair> {
    let mut rng = seed::rng(seed::derive_index(request.request_seed, "schedule", 0));
    let mut benchmarks = request.benchmarks.clone();
    if request.randomize_benchmark_order {
        benchmarks.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(benchmarks.len() * request.in_call_repeats as usize);
    for repeat_index in 0..request.in_call_repeats {
        for benchmark in &benchmarks {
            let order = if request.randomize_version_order && rng.random_bool(0.5) {
                [Version::V2, Version::V1]
            } else {
                [Version::V1, Version::V2]
            };
            out.push(ScheduledPair {
                repeat_index,
                benchmark: benchmark.clone(),
                order,
            });
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum BackendBuildError {
    #[error("missing {0} settings")]
    MissingSettings(&'static str),
    #[error(transparent)]
    Adapter(#[from] crate::adapter::AdapterError),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Builds the backend selected by `config.backend`.
pub fn build_backend(config: &ExperimentConfig) -> Result<Arc<dyn Backend>, BackendBuildError> {
    let settings = &config.backend;
    Ok(match settings.kind {
        BackendKind::Local => {
            let adapter = settings
                .adapter
                .clone()
                .ok_or(BackendBuildError::MissingSettings("adapter"))?;
            adapter.validate()?;
            Arc::new(local::LocalBackend::new(adapter, config.max_parallelism as usize))
        }
        BackendKind::Sim => {
            let scenario = settings
                .scenario
                .clone()
                .ok_or(BackendBuildError::MissingSettings("scenario"))?;
            scenario.validate().map_err(BackendBuildError::Scenario)?;
            Arc::new(sim::Simulator::new(scenario, config.memory_mb))
        }
        BackendKind::Http => {
            let http = settings.http.clone().unwrap_or_default();
            let endpoint = http
                .endpoint
                .ok_or(BackendBuildError::MissingSettings("http endpoint"))?;
            Arc::new(http::HttpBackend::new(endpoint, http.request_timeout_s))
        }
    })
}
