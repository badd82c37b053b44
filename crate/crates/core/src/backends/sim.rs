//! Deterministic virtual FaaS platform.
//!
//! A measurement is modelled as
//!
//! ```text
//! ns = base_ns * version_mult * instance_factor * diurnal(t) * cold_mult
//!      * memory_mult * exp(N(0, sigma_noise)) * exp(N(0, benchmark_cv))
//! ```
//!
//! Both versions of a pair share the instance, the sample time and therefore
//! every factor except the version multiplier and the per-run noise terms.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Mutex;

use chrono::{DateTime, Duration as ChronoDuration, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{schedule, Backend, InvocationError, InvocationRequest, InvocationResponse, VirtualPlatform};
use crate::model::{BenchmarkFailure, BenchmarkId, FailureCause, Measurement, Version};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBenchmark {
    pub id: BenchmarkId,
    /// True v1 cost.
    pub base_ns: f64,
    /// v2 runs at `1 + true_effect_pct / 100` times the v1 cost.
    #[serde(default)]
    pub true_effect_pct: f64,
    /// Intrinsic per-run variability (log-normal sigma).
    #[serde(default)]
    pub benchmark_cv: f64,
    /// Virtual wall time of one run.
    #[serde(default = "default_run_s")]
    pub run_s: f64,
    #[serde(default)]
    pub fails_to_build: bool,
}

fn default_run_s() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorScenario {
    pub benchmarks: Vec<SimBenchmark>,
    /// Log-normal sigma of the per-instance speed factor.
    pub sigma_instance: f64,
    /// Peak-to-trough fraction of the diurnal cycle.
    pub diurnal_amplitude: f64,
    pub diurnal_period_s: f64,
    pub diurnal_phase_s: f64,
    /// Per-run log-normal sigma shared by all benchmarks.
    pub sigma_noise: f64,
    pub cold_penalty_factor: f64,
    pub cold_latency_s: f64,
    pub invocation_overhead_s: f64,
    pub instance_max_lifetime_s: f64,
    /// Diurnal-clock seconds per virtual second.
    pub virtual_clock_rate: f64,
    /// memory_mb -> runtime multiplier, interpolated linearly and clamped.
    pub memory_speed: BTreeMap<u32, f64>,
    pub seed: u64,
    pub epoch: DateTime<Utc>,
}

impl Default for SimulatorScenario {
    fn default() -> Self {
        Self {
            benchmarks: Vec::new(),
            sigma_instance: 0.05,
            diurnal_amplitude: 0.15,
            diurnal_period_s: 24.0 * 3600.0,
            diurnal_phase_s: 0.0,
            sigma_noise: 0.02,
            cold_penalty_factor: 1.0,
            cold_latency_s: 0.5,
            invocation_overhead_s: 0.05,
            instance_max_lifetime_s: 900.0,
            virtual_clock_rate: 1.0,
            memory_speed: BTreeMap::new(),
            seed: 0,
            epoch: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }
}

/// Intrinsic variability levels cycled through by [`SimulatorScenario::synthetic`].
pub const CV_MIX: [f64; 4] = [0.005, 0.01, 0.02, 0.03];

/// Parameters for generating a synthetic suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub count: usize,
    /// The first `changed` benchmarks carry `effect_pct`.
    pub changed: usize,
    pub effect_pct: f64,
    pub seed: u64,
}

impl SimulatorScenario {
    /// Default platform noise with a generated suite of benchmarks.
    pub fn synthetic(suite: &SyntheticSuite) -> Self {
        let mut rng = seed::rng(seed::derive(suite.seed, &["synthetic-suite"]));
        let benchmarks = (0..suite.count)
            .map(|i| {
                let log_ns: f64 = rng.random_range(1.0..6.0);
                SimBenchmark {
                    id: BenchmarkId::parse(&format!("Benchmark{:03}/cfg_{}", i / 2, i % 2)).expect("valid id"),
                    base_ns: 10f64.powf(log_ns),
                    true_effect_pct: if i < suite.changed { suite.effect_pct } else { 0.0 },
                    benchmark_cv: CV_MIX[i % CV_MIX.len()],
                    run_s: 1.0,
                    fails_to_build: false,
                }
            })
            .collect();
        Self {
            benchmarks,
            seed: suite.seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let sigmas = [self.sigma_instance, self.sigma_noise];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err("sigmas must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.diurnal_amplitude) {
            return Err("diurnal_amplitude must lie in [0, 1)".into());
        }
        if !(self.diurnal_period_s > 0.0) || !(self.virtual_clock_rate > 0.0) {
            return Err("diurnal_period_s and virtual_clock_rate must be positive".into());
        }
        if !(self.instance_max_lifetime_s > 0.0) {
            return Err("instance_max_lifetime_s must be positive".into());
        }
        if !(self.cold_penalty_factor > 0.0) || self.cold_latency_s < 0.0 || self.invocation_overhead_s < 0.0 {
            return Err("cold/overhead settings out of range".into());
        }
        if self.memory_speed.values().any(|v| !(*v > 0.0)) {
            return Err("memory_speed multipliers must be positive".into());
        }
        let mut seen = BTreeSet::new();
        for b in &self.benchmarks {
            if !seen.insert(&b.id) {
                return Err(format!("duplicate benchmark {}", b.id));
            }
            if !(b.base_ns > 0.0) {
                return Err(format!("{}: base_ns must be positive", b.id));
            }
            if !(b.true_effect_pct > -100.0) {
                return Err(format!("{}: true_effect_pct must exceed -100", b.id));
            }
            if !(b.benchmark_cv >= 0.0) || !(b.run_s > 0.0) {
                return Err(format!("{}: benchmark_cv must be >= 0 and run_s > 0", b.id));
            }
        }
        Ok(())
    }

    pub fn benchmark_ids(&self) -> Vec<BenchmarkId> {
        let mut ids: Vec<_> = self.benchmarks.iter().map(|b| b.id.clone()).collect();
        ids.sort();
        ids
    }

    pub fn benchmark(&self, id: &BenchmarkId) -> Option<&SimBenchmark> {
        self.benchmarks.iter().find(|b| &b.id == id)
    }

    /// `1 + (a/2) sin(2 pi t / period)` on the diurnal clock.
    pub fn diurnal(&self, virtual_time_s: f64) -> f64 {
        let t = self.diurnal_phase_s + virtual_time_s * self.virtual_clock_rate;
        1.0 + self.diurnal_amplitude / 2.0 * (2.0 * PI * t / self.diurnal_period_s).sin()
    }

    pub fn memory_multiplier(&self, memory_mb: u32) -> f64 {
        let mut below = None;
        for (&mb, &mult) in &self.memory_speed {
            if mb == memory_mb {
                return mult;
            }
            if mb > memory_mb {
                return match below {
                    None => mult,
                    Some((lo_mb, lo_mult)) => {
                        let frac = f64::from(memory_mb - lo_mb) / f64::from(mb - lo_mb);
                        lo_mult + frac * (mult - lo_mult)
                    }
                };
            }
            below = Some((mb, mult));
        }
        below.map_or(1.0, |(_, mult)| mult)
    }
}

/// Per-instance state fixed at birth.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceState {
    pub id: String,
    pub speed_factor: f64,
    pub born_s: f64,
    busy_until_s: f64,
    seq: u64,
}

/// Draws one measurement. Always consumes exactly two normal draws.
#[allow(clippy::too_many_arguments)]
pub fn sim_sample(
    scenario: &SimulatorScenario,
    benchmark: &SimBenchmark,
    version: Version,
    instance: &InstanceState,
    virtual_time_s: f64,
    cold: bool,
    memory_mult: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let version_mult = match version {
        Version::V1 => 1.0,
        Version::V2 => 1.0 + benchmark.true_effect_pct / 100.0,
    };
    let cold_mult = if cold { scenario.cold_penalty_factor } else { 1.0 };
    let z_platform: f64 = rng.sample(StandardNormal);
    let z_bench: f64 = rng.sample(StandardNormal);
    let shared = benchmark.base_ns * instance.speed_factor * scenario.diurnal(virtual_time_s) * cold_mult * memory_mult;
    shared * version_mult * (scenario.sigma_noise * z_platform).exp() * (benchmark.benchmark_cv * z_bench).exp()
}

#[derive(Debug)]
struct PlatformState {
    instances: Vec<InstanceState>,
    births: u64,
    rng: ChaCha8Rng,
    clock_s: f64,
}

impl PlatformState {
    /// Reuses the most recently released idle instance, else scales up.
    fn acquire(&mut self, scenario: &SimulatorScenario, t: f64) -> (usize, bool) {
        let lifetime = scenario.instance_max_lifetime_s;
        self.instances
            .retain(|i| !(i.busy_until_s <= t && t - i.born_s > lifetime));
        let idle = self
            .instances
            .iter()
            .enumerate()
            .filter(|(_, i)| i.busy_until_s <= t)
            .max_by(|(_, a), (_, b)| a.busy_until_s.total_cmp(&b.busy_until_s).then(a.seq.cmp(&b.seq)))
            .map(|(idx, _)| idx);
        if let Some(idx) = idle {
            return (idx, false);
        }
        let z: f64 = self.rng.sample(StandardNormal);
        let seq = self.births;
        self.births += 1;
        self.instances.push(InstanceState {
            id: format!("sim-{seq:05}"),
            speed_factor: (scenario.sigma_instance * z).exp(),
            born_s: t,
            busy_until_s: t,
            seq,
        });
        (self.instances.len() - 1, true)
    }
}

/// Virtual platform. State mutation is serialized behind one lock.
#[derive(Debug)]
pub struct Simulator {
    scenario: SimulatorScenario,
    memory_mult: f64,
    state: Mutex<PlatformState>,
}

impl Simulator {
    pub fn new(scenario: SimulatorScenario, memory_mb: u32) -> Self {
        let rng = seed::rng(seed::derive(scenario.seed, &["platform"]));
        Self {
            memory_mult: scenario.memory_multiplier(memory_mb),
            scenario,
            state: Mutex::new(PlatformState {
                instances: Vec::new(),
                births: 0,
                rng,
                clock_s: 0.0,
            }),
        }
    }

    pub fn scenario(&self) -> &SimulatorScenario {
        &self.scenario
    }

    pub fn live_instances(&self) -> usize {
        self.state.lock().expect("simulator lock").instances.len()
    }

    fn timestamp(&self, t: f64) -> DateTime<Utc> {
        self.scenario.epoch + ChronoDuration::nanoseconds((t * 1e9).round() as i64)
    }

    fn run(&self, request: &InvocationRequest, start_s: f64) -> Result<InvocationResponse, InvocationError> {
        request.validate()?;
        let mut state = self.state.lock().expect("simulator lock");
        let (idx, cold) = state.acquire(&self.scenario, start_s);
        let instance = state.instances[idx].clone();
        let mut rng = seed::rng(seed::derive_index(self.scenario.seed, "noise", request.request_seed));
        let invocation_id = format!("req-{:016x}", request.request_seed);

        let mut t = start_s + self.scenario.invocation_overhead_s;
        if cold {
            t += self.scenario.cold_latency_s;
        }
        let mut measurements = Vec::new();
        let mut failures = Vec::new();
        let mut broken: BTreeMap<BenchmarkId, (FailureCause, String)> = BTreeMap::new();
        let fail = |benchmark: &BenchmarkId, repeat_index, cause, detail: String| BenchmarkFailure {
            benchmark: benchmark.clone(),
            invocation_id: invocation_id.clone(),
            repeat_index: Some(repeat_index),
            cause,
            detail,
        };

        for slot in schedule(request) {
            if let Some((cause, detail)) = broken.get(&slot.benchmark) {
                failures.push(fail(&slot.benchmark, slot.repeat_index, *cause, detail.clone()));
                continue;
            }
            let Some(bench) = self.scenario.benchmark(&slot.benchmark) else {
                let detail = "unknown benchmark".to_owned();
                failures.push(fail(
                    &slot.benchmark,
                    slot.repeat_index,
                    FailureCause::BuildOrRunError,
                    detail.clone(),
                ));
                broken.insert(slot.benchmark.clone(), (FailureCause::BuildOrRunError, detail));
                continue;
            };
            if bench.fails_to_build {
                let detail = "build failed".to_owned();
                failures.push(fail(
                    &slot.benchmark,
                    slot.repeat_index,
                    FailureCause::BuildOrRunError,
                    detail.clone(),
                ));
                broken.insert(slot.benchmark.clone(), (FailureCause::BuildOrRunError, detail));
                continue;
            }
            if bench.run_s > request.timeout_s {
                t += request.timeout_s;
                let detail = format!("interrupted after {}s", request.timeout_s);
                failures.push(fail(
                    &slot.benchmark,
                    slot.repeat_index,
                    FailureCause::Timeout,
                    detail.clone(),
                ));
                broken.insert(slot.benchmark.clone(), (FailureCause::Timeout, detail));
                continue;
            }
            let pair_time = t;
            for version in slot.order {
                let ns = sim_sample(
                    &self.scenario,
                    bench,
                    version,
                    &instance,
                    pair_time,
                    cold,
                    self.memory_mult,
                    &mut rng,
                );
                measurements.push(Measurement {
                    benchmark: slot.benchmark.clone(),
                    version,
                    ns_per_op: ns,
                    iterations: ((bench.run_s * 1e9 / ns).round() as u64).max(1),
                    instance_id: instance.id.clone(),
                    invocation_id: invocation_id.clone(),
                    cold_start: cold,
                    repeat_index: slot.repeat_index,
                    wall_time: self.timestamp(pair_time),
                });
                t += bench.run_s;
            }
        }

        state.instances[idx].busy_until_s = t;
        state.clock_s = state.clock_s.max(t);
        Ok(InvocationResponse {
            instance_id: instance.id,
            cold_start: cold,
            duration_s: t - start_s,
            measurements,
            failures,
        })
    }
}

impl Backend for Simulator {
    /// Sequential semantics: each call starts when the previous one ended.
    fn invoke(&self, request: &InvocationRequest) -> Result<InvocationResponse, InvocationError> {
        let start = self.state.lock().expect("simulator lock").clock_s;
        self.run(request, start)
    }

    fn as_virtual(&self) -> Option<&dyn VirtualPlatform> {
        Some(self)
    }
}

impl VirtualPlatform for Simulator {
    fn invoke_at(&self, request: &InvocationRequest, start_s: f64) -> Result<InvocationResponse, InvocationError> {
        self.run(request, start_s)
    }

    fn epoch(&self) -> DateTime<Utc> {
        self.scenario.epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pair_measurements;

    fn bench(id: &str, base: f64, effect: f64) -> SimBenchmark {
        SimBenchmark {
            id: id.parse().unwrap(),
            base_ns: base,
            true_effect_pct: effect,
            benchmark_cv: 0.0,
            run_s: 1.0,
            fails_to_build: false,
        }
    }

    fn quiet(benchmarks: Vec<SimBenchmark>) -> SimulatorScenario {
        SimulatorScenario {
            benchmarks,
            sigma_instance: 0.0,
            diurnal_amplitude: 0.0,
            sigma_noise: 0.0,
            ..SimulatorScenario::default()
        }
    }

    fn request(ids: &[&str], repeats: u32, seed: u64) -> InvocationRequest {
        InvocationRequest {
            benchmarks: ids.iter().map(|s| s.parse().unwrap()).collect(),
            in_call_repeats: repeats,
            randomize_version_order: true,
            randomize_benchmark_order: true,
            timeout_s: 20.0,
            request_seed: seed,
        }
    }

    fn instance(factor: f64) -> InstanceState {
        InstanceState {
            id: "i".into(),
            speed_factor: factor,
            born_s: 0.0,
            busy_until_s: 0.0,
            seq: 0,
        }
    }

    #[test]
    fn degenerate_sample_is_base() {
        let s = quiet(vec![bench("A", 100.0, 0.0)]);
        let mut rng = seed::rng(1);
        for v in Version::BOTH {
            assert_eq!(
                sim_sample(&s, &s.benchmarks[0], v, &instance(1.0), 123.0, false, 1.0, &mut rng),
                100.0
            );
        }
    }

    #[test]
    fn instance_bias_cancels() {
        let s = quiet(vec![bench("A", 100.0, 0.0)]);
        let mut rng = seed::rng(1);
        let b = &s.benchmarks[0];
        let v1 = sim_sample(&s, b, Version::V1, &instance(1.2), 0.0, false, 1.0, &mut rng);
        let v2 = sim_sample(&s, b, Version::V2, &instance(1.2), 0.0, false, 1.0, &mut rng);
        assert!((v1 - 120.0).abs() < 1e-9);
        assert_eq!(v1, v2);
    }

    #[test]
    fn noise_log_mean_is_centered() {
        let s = SimulatorScenario {
            sigma_noise: 0.02,
            ..quiet(vec![bench("A", 100.0, 0.0)])
        };
        let mut rng = seed::rng(seed::derive(99, &["noise-oracle"]));
        let n = 10_000;
        let mean = (0..n)
            .map(|_| {
                (sim_sample(
                    &s,
                    &s.benchmarks[0],
                    Version::V1,
                    &instance(1.0),
                    0.0,
                    false,
                    1.0,
                    &mut rng,
                ) / 100.0)
                    .ln()
            })
            .sum::<f64>()
            / f64::from(n);
        assert!(mean.abs() <= 3.0 * 0.02 / f64::from(n).sqrt(), "mean {mean}");
    }

    #[test]
    fn diurnal_peak_to_trough() {
        let s = SimulatorScenario::default();
        let period = s.diurnal_period_s;
        let peak = s.diurnal(period / 4.0);
        let trough = s.diurnal(3.0 * period / 4.0);
        let expected = (1.0 + 0.075) / (1.0 - 0.075);
        assert!((peak / trough - expected).abs() < 1e-12);
        assert!((peak / trough - 1.1622).abs() < 1e-4);
    }

    #[test]
    fn noise_free_pairs() {
        let sim = Simulator::new(quiet(vec![bench("A", 100.0, 5.0)]), 2048);
        let resp = sim.invoke(&request(&["A"], 3, 7)).unwrap();
        assert_eq!(resp.measurements.len(), 6);
        for m in &resp.measurements {
            let expected = if m.version == Version::V1 { 100.0 } else { 105.0 };
            assert!((m.ns_per_op - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn pairs_cancel_platform_noise_exactly() {
        let s = SimulatorScenario {
            sigma_instance: 0.3,
            diurnal_amplitude: 0.5,
            diurnal_period_s: 10.0,
            ..quiet(vec![bench("A", 321.0, 5.0), bench("B", 7.0, 5.0)])
        };
        let sim = Simulator::new(s, 2048);
        for seed in 0..20 {
            let resp = sim.invoke(&request(&["A", "B"], 3, seed)).unwrap();
            let pairs = pair_measurements(&resp.measurements).unwrap();
            assert_eq!(pairs.pairs.len(), 6);
            for p in pairs.pairs {
                assert!((p.rel_diff_pct - 5.0).abs() <= 5.0 * 1e-9, "{}", p.rel_diff_pct);
            }
        }
    }

    #[test]
    fn sequential_invocations_reuse_instance() {
        let sim = Simulator::new(quiet(vec![bench("A", 1.0, 0.0)]), 2048);
        let a = sim.invoke(&request(&["A"], 1, 1)).unwrap();
        let b = sim.invoke(&request(&["A"], 1, 2)).unwrap();
        assert!(a.cold_start);
        assert!(!b.cold_start);
        assert_eq!(a.instance_id, b.instance_id);
    }

    #[test]
    fn concurrent_first_wave_is_all_cold() {
        let sim = Simulator::new(quiet(vec![bench("A", 1.0, 0.0)]), 2048);
        let ids: BTreeSet<_> = (0..150)
            .map(|i| {
                let r = sim.invoke_at(&request(&["A"], 1, i), 0.0).unwrap();
                assert!(r.cold_start);
                r.instance_id
            })
            .collect();
        assert_eq!(ids.len(), 150);
    }

    #[test]
    fn retired_instances_are_replaced() {
        let sim = Simulator::new(quiet(vec![bench("A", 1.0, 0.0)]), 2048);
        let first = sim.invoke_at(&request(&["A"], 1, 1), 0.0).unwrap();
        let warm = sim.invoke_at(&request(&["A"], 1, 2), 100.0).unwrap();
        assert_eq!(first.instance_id, warm.instance_id);
        assert!(!warm.cold_start);
        let late = sim.invoke_at(&request(&["A"], 1, 3), 1000.0).unwrap();
        assert!(late.cold_start);
        assert_ne!(late.instance_id, first.instance_id);
    }

    #[test]
    fn lifo_reuse_prefers_latest_release() {
        let sim = Simulator::new(quiet(vec![bench("A", 1.0, 0.0)]), 2048);
        let a = sim.invoke_at(&request(&["A"], 1, 1), 0.0).unwrap();
        let b = sim.invoke_at(&request(&["A"], 1, 2), 1.0).unwrap();
        assert_ne!(a.instance_id, b.instance_id);
        let c = sim.invoke_at(&request(&["A"], 1, 3), 50.0).unwrap();
        assert_eq!(c.instance_id, b.instance_id);
    }

    #[test]
    fn timeouts_and_build_failures() {
        let mut slow = bench("Slow", 1.0, 0.0);
        slow.run_s = 25.0;
        let mut broken = bench("Broken", 1.0, 0.0);
        broken.fails_to_build = true;
        let sim = Simulator::new(quiet(vec![slow, broken]), 2048);
        let resp = sim.invoke(&request(&["Slow"], 1, 1)).unwrap();
        assert!(resp.measurements.is_empty());
        assert_eq!(resp.failures.len(), 1);
        assert_eq!(resp.failures[0].cause, FailureCause::Timeout);

        let resp = sim.invoke(&request(&["Broken"], 3, 1)).unwrap();
        assert_eq!(resp.failures.len(), 3);
        assert!(resp.failures.iter().all(|f| f.cause == FailureCause::BuildOrRunError));
    }

    #[test]
    fn deterministic_streams() {
        let s = SimulatorScenario::synthetic(&SyntheticSuite {
            count: 6,
            changed: 3,
            effect_pct: 10.0,
            seed: 5,
        });
        let ids: Vec<String> = s.benchmark_ids().iter().map(|i| i.to_string()).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let run = || {
            let sim = Simulator::new(s.clone(), 2048);
            (0..10)
                .map(|i| sim.invoke(&request(&ids, 3, i)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn memory_map_interpolates() {
        let s = SimulatorScenario {
            memory_speed: [(1024, 2.0), (2048, 1.0)].into_iter().collect(),
            ..SimulatorScenario::default()
        };
        assert_eq!(s.memory_multiplier(1024), 2.0);
        assert_eq!(s.memory_multiplier(1536), 1.5);
        assert_eq!(s.memory_multiplier(512), 2.0);
        assert_eq!(s.memory_multiplier(4096), 1.0);
        assert_eq!(SimulatorScenario::default().memory_multiplier(2048), 1.0);
    }

    #[test]
    fn scenario_validation() {
        let mut s = quiet(vec![bench("A", 1.0, -100.0)]);
        assert!(s.validate().is_err());
        s.benchmarks[0].true_effect_pct = 0.0;
        s.validate().unwrap();
        s.diurnal_amplitude = 1.0;
        assert!(s.validate().is_err());
    }
}
