//! Local worker pool. Each worker models one function instance with its own
//! writable scratch directory and serves invocations sequentially.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::Utc;

use super::{schedule, Backend, InvocationError, InvocationErrorKind, InvocationRequest, InvocationResponse};
use crate::adapter::{run_benchmark, run_warmup, AdapterSpec};
use crate::model::{BenchmarkFailure, BenchmarkId, FailureCause, Measurement};

#[derive(Debug)]
struct Worker {
    id: String,
    scratch: PathBuf,
    warmed: bool,
}

#[derive(Debug, Default)]
struct Pool {
    idle: Vec<Worker>,
    spawned: usize,
    invocations: u64,
}

#[derive(Debug)]
pub struct LocalBackend {
    adapter: AdapterSpec,
    pool_size: usize,
    scratch_root: PathBuf,
    pool: Mutex<Pool>,
    freed: Condvar,
}

impl LocalBackend {
    pub fn new(adapter: AdapterSpec, pool_size: usize) -> Self {
        let scratch_root = std::env::temp_dir().join(format!(
            "elastibench-{}-{:x}",
            std::process::id(),
            Utc::now().timestamp_nanos_opt().unwrap_or_default()
        ));
        Self::with_scratch_root(adapter, pool_size, scratch_root)
    }

    pub fn with_scratch_root(adapter: AdapterSpec, pool_size: usize, scratch_root: PathBuf) -> Self {
        Self {
            adapter,
            pool_size: pool_size.max(1),
            scratch_root,
            pool: Mutex::new(Pool::default()),
            freed: Condvar::new(),
        }
    }

    pub fn workers_spawned(&self) -> usize {
        self.pool.lock().expect("pool lock").spawned
    }

    fn checkout(&self) -> Result<Worker, InvocationError> {
        let mut pool = self.pool.lock().expect("pool lock");
        loop {
            // LIFO: the most recently returned worker is the warmest
            if let Some(worker) = pool.idle.pop() {
                return Ok(worker);
            }
            if pool.spawned < self.pool_size {
                let id = format!("local-{:04}", pool.spawned);
                pool.spawned += 1;
                let scratch = self.scratch_root.join(&id);
                fs::create_dir_all(&scratch).map_err(|e| {
                    InvocationError::new(InvocationErrorKind::WorkerCrash, true, format!("scratch dir: {e}"))
                })?;
                return Ok(Worker {
                    id,
                    scratch,
                    warmed: false,
                });
            }
            pool = self.freed.wait(pool).expect("pool lock");
        }
    }

    fn checkin(&self, worker: Worker) {
        let mut pool = self.pool.lock().expect("pool lock");
        pool.idle.push(worker);
        pool.invocations += 1;
        drop(pool);
        self.freed.notify_one();
    }

    fn serve(&self, worker: &mut Worker, request: &InvocationRequest) -> Result<InvocationResponse, InvocationError> {
        let started = Instant::now();
        let cold = !worker.warmed;
        let timeout = Duration::from_secs_f64(request.timeout_s);
        if cold {
            run_warmup(&self.adapter, &worker.scratch, timeout).map_err(|e| {
                InvocationError::new(InvocationErrorKind::WorkerCrash, true, format!("warm-up failed: {e}"))
            })?;
            worker.warmed = true;
        }

        let invocation_id = format!("{}-{:016x}", worker.id, request.request_seed);
        let mut measurements = Vec::new();
        let mut failures = Vec::new();
        let mut broken: BTreeMap<BenchmarkId, (FailureCause, String)> = BTreeMap::new();
        for slot in schedule(request) {
            let failure = |cause, detail| BenchmarkFailure {
                benchmark: slot.benchmark.clone(),
                invocation_id: invocation_id.clone(),
                repeat_index: Some(slot.repeat_index),
                cause,
                detail,
            };
            if let Some((cause, detail)) = broken.get(&slot.benchmark) {
                failures.push(failure(*cause, detail.clone()));
                continue;
            }
            let wall_time = Utc::now();
            for version in slot.order {
                match run_benchmark(&self.adapter, version, &slot.benchmark, timeout, Some(&worker.scratch)) {
                    Ok(run) => measurements.push(Measurement {
                        benchmark: slot.benchmark.clone(),
                        version,
                        ns_per_op: run.ns_per_op,
                        iterations: run.iterations,
                        instance_id: worker.id.clone(),
                        invocation_id: invocation_id.clone(),
                        cold_start: cold,
                        repeat_index: slot.repeat_index,
                        wall_time,
                    }),
                    Err(e) => {
                        failures.push(failure(e.cause, e.detail.clone()));
                        broken.insert(slot.benchmark.clone(), (e.cause, e.detail));
                        break;
                    }
                }
            }
        }
        Ok(InvocationResponse {
            instance_id: worker.id.clone(),
            cold_start: cold,
            duration_s: started.elapsed().as_secs_f64(),
            measurements,
            failures,
        })
    }
}

impl Backend for LocalBackend {
    fn invoke(&self, request: &InvocationRequest) -> Result<InvocationResponse, InvocationError> {
        request.validate()?;
        let mut worker = self.checkout()?;
        let outcome = self.serve(&mut worker, request);
        self.checkin(worker);
        outcome
    }
}

impl Drop for LocalBackend {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.scratch_root);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pair_measurements, Version};
    use std::os::unix::fs::PermissionsExt;

    const ADAPTER: &str = r#"#!/bin/sh
cmd="$1"; shift
while [ $# -gt 0 ]; do
  case "$1" in --bench) bench="$2"; shift;; esac; shift
done
echo "$ELASTIBENCH_VERSION" >> "$ELASTIBENCH_SCRATCH_DIR/order"
case "$bench" in
  Slow) sleep 3 ;;
  *) if [ "$ELASTIBENCH_VERSION" = v1 ]; then ns=100; else ns=110; fi
     printf '%s\t1000\t%s\n' "$bench" "$ns" ;;
esac
"#;

    fn backend(pool: usize) -> (tempfile::TempDir, LocalBackend) {
        let tmp = tempfile::tempdir().unwrap();
        let exe = tmp.path().join("adapter.sh");
        fs::write(&exe, ADAPTER).unwrap();
        fs::set_permissions(&exe, fs::Permissions::from_mode(0o755)).unwrap();
        fs::create_dir(tmp.path().join("v1")).unwrap();
        fs::create_dir(tmp.path().join("v2")).unwrap();
        let spec = AdapterSpec {
            executable_path: exe,
            extra_args: vec![],
            v1_dir: tmp.path().join("v1"),
            v2_dir: tmp.path().join("v2"),
            warmup_hook: Some("echo warm > \"$ELASTIBENCH_SCRATCH_DIR/warm\"".into()),
        };
        let root = tmp.path().join("scratch");
        (tmp, LocalBackend::with_scratch_root(spec, pool, root))
    }

    fn request(bench: &str, repeats: u32, randomize: bool, seed: u64, timeout_s: f64) -> InvocationRequest {
        InvocationRequest {
            benchmarks: vec![bench.parse().unwrap()],
            in_call_repeats: repeats,
            randomize_version_order: randomize,
            randomize_benchmark_order: false,
            timeout_s,
            request_seed: seed,
        }
    }

    #[test]
    fn cold_then_warm_on_same_worker() {
        let (tmp, b) = backend(1);
        let first = b.invoke(&request("A", 1, false, 1, 5.0)).unwrap();
        let second = b.invoke(&request("A", 1, false, 2, 5.0)).unwrap();
        assert!(first.cold_start);
        assert!(!second.cold_start);
        assert_eq!(first.instance_id, second.instance_id);
        assert!(tmp
            .path()
            .join("scratch")
            .join(&first.instance_id)
            .join("warm")
            .exists());
    }

    #[test]
    fn fixed_version_order_and_pairing() {
        let (tmp, b) = backend(1);
        let resp = b.invoke(&request("A", 3, false, 1, 5.0)).unwrap();
        assert_eq!(resp.measurements.len(), 6);
        let versions: Vec<Version> = resp.measurements.iter().map(|m| m.version).collect();
        assert_eq!(versions, [Version::V1, Version::V2].repeat(3));
        let order = fs::read_to_string(tmp.path().join("scratch").join(&resp.instance_id).join("order")).unwrap();
        assert_eq!(order, "v1\nv2\n".repeat(3));
        let pairs = pair_measurements(&resp.measurements).unwrap();
        assert_eq!(pairs.pairs.len(), 3);
        assert!(pairs.pairs.iter().all(|p| (p.rel_diff_pct - 10.0).abs() < 1e-9));
    }

    #[test]
    fn timeout_becomes_failure() {
        let (_tmp, b) = backend(1);
        let resp = b.invoke(&request("Slow", 1, false, 1, 0.5)).unwrap();
        assert!(resp.measurements.is_empty());
        assert_eq!(resp.failures.len(), 1);
        assert_eq!(resp.failures[0].cause, FailureCause::Timeout);
    }

    #[test]
    fn pool_grows_to_demand() {
        let (_tmp, b) = backend(4);
        std::thread::scope(|s| {
            for i in 0..4 {
                let b = &b;
                s.spawn(move || b.invoke(&request("A", 1, true, i, 5.0)).unwrap());
            }
        });
        assert!(b.workers_spawned() <= 4);
        assert!(b.workers_spawned() >= 1);
    }
}
