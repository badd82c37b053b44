//! Shared domain types and the raw results data model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::AdapterSpec;
use crate::backends::sim::SimulatorScenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid benchmark id {0:?}")]
    InvalidId(String),
    #[error("duplicate {version} measurement for {benchmark} in {invocation_id} repeat {repeat_index}")]
    DataIntegrity {
        benchmark: BenchmarkId,
        invocation_id: String,
        repeat_index: u32,
        version: Version,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Canonical benchmark identifier, `suite` or `suite/config`.
///
/// Configurations of one benchmark function are distinct ids. Ordering is
/// lexicographic on the canonical string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BenchmarkId(String);

impl BenchmarkId {
    pub fn new(suite_name: &str, config_label: Option<&str>) -> Result<Self, ModelError> {
        let canonical = match config_label {
            Some(label) => format!("{suite_name}/{label}"),
            None => suite_name.to_owned(),
        };
        if suite_name.is_empty() || suite_name.contains('/') || config_label == Some("") {
            return Err(ModelError::InvalidId(canonical));
        }
        Self::parse(&canonical)
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        let bad = s.is_empty()
            || s.starts_with('/')
            || s.ends_with('/')
            || s.chars().any(|c| c.is_whitespace() || c.is_control());
        if bad {
            return Err(ModelError::InvalidId(s.to_owned()));
        }
        Ok(Self(s.to_owned()))
    }

    pub fn suite_name(&self) -> &str {
        self.0.split_once('/').map_or(&self.0, |(suite, _)| suite)
    }

    pub fn config_label(&self) -> Option<&str> {
        self.0.split_once('/').map(|(_, cfg)| cfg)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for BenchmarkId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl TryFrom<String> for BenchmarkId {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::parse(&s)
    }
}

impl From<BenchmarkId> for String {
    fn from(id: BenchmarkId) -> Self {
        id.0
    }
}

/// Builds the canonical id from its parts.
pub fn canonical_id(suite_name: &str, config_label: Option<&str>) -> Result<BenchmarkId, ModelError> {
    BenchmarkId::new(suite_name, config_label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Version {
    V1,
    V2,
}

impl Version {
    pub const BOTH: [Version; 2] = [Version::V1, Version::V2];

    pub fn as_str(self) -> &'static str {
        match self {
            Version::V1 => "v1",
            Version::V2 => "v2",
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionPair {
    pub v1_ref: String,
    pub v2_ref: String,
}

impl VersionPair {
    pub fn new(v1_ref: impl Into<String>, v2_ref: impl Into<String>) -> Result<Self, ModelError> {
        let pair = Self {
            v1_ref: v1_ref.into(),
            v2_ref: v2_ref.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.v1_ref.is_empty() || self.v2_ref.is_empty() {
            return Err(ModelError::InvalidConfig("version refs must be non-empty".into()));
        }
        Ok(())
    }

    pub fn is_aa(&self) -> bool {
        self.v1_ref == self.v2_ref
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianEstimator {
    /// Median over per-pair relative differences.
    #[default]
    PairwiseMedian,
    /// Relative difference between the per-version medians.
    DifferenceOfMedians,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pricing {
    pub price_per_gb_s: f64,
    pub price_per_request: f64,
}

impl Default for Pricing {
    fn default() -> Self {
        Self {
            price_per_gb_s: 1.666_67e-5,
            price_per_request: 2e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Local,
    #[default]
    Sim,
    Http,
}

impl FromStr for BackendKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(Self::Local),
            "sim" => Ok(Self::Sim),
            "http" => Ok(Self::Http),
            other => Err(ModelError::InvalidConfig(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpSettings {
    pub endpoint: Option<String>,
    pub request_timeout_s: f64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            request_timeout_s: 900.0,
        }
    }
}

/// Backend selector plus the settings of each backend kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSettings {
    pub kind: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapter: Option<AdapterSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<SimulatorScenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpSettings>,
}

/// All knobs of one suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Measurements of each version per invocation.
    pub in_call_repeats: u32,
    /// Invocations per benchmark.
    pub call_repeats: u32,
    /// Maximum in-flight invocations.
    pub max_parallelism: u32,
    pub per_benchmark_timeout_s: f64,
    /// Benchmarks with fewer paired results are excluded.
    pub min_results: u32,
    pub ci_level: f64,
    pub bootstrap_resamples: u32,
    pub randomize_version_order: bool,
    pub randomize_call_order: bool,
    pub randomize_benchmark_order: bool,
    /// Benchmarks packed into one invocation.
    pub benchmarks_per_call: u32,
    pub seed: u64,
    pub memory_mb: u32,
    /// Planning estimate; stragglers past 3x this are abandoned.
    pub expected_invocation_s: f64,
    pub median_estimator: MedianEstimator,
    pub pricing: Pricing,
    pub gate_pct: f64,
    /// Consecutive failed invocations (after retries) that abort the run.
    pub abort_after_invocation_errors: u32,
    pub backend: BackendSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            in_call_repeats: 3,
            call_repeats: 15,
            max_parallelism: 150,
            per_benchmark_timeout_s: 20.0,
            min_results: 10,
            ci_level: 0.99,
            bootstrap_resamples: 10_000,
            randomize_version_order: true,
            randomize_call_order: true,
            randomize_benchmark_order: true,
            benchmarks_per_call: 1,
            seed: 0,
            memory_mb: 2048,
            expected_invocation_s: 10.0,
            median_estimator: MedianEstimator::PairwiseMedian,
            pricing: Pricing::default(),
            gate_pct: 3.0,
            abort_after_invocation_errors: 10,
            backend: BackendSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn target_results_per_benchmark(&self) -> u64 {
        u64::from(self.in_call_repeats) * u64::from(self.call_repeats)
    }

    /// Full check including the backend section.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_parameters()?;
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_owned()));
        match self.backend.kind {
            BackendKind::Local => match &self.backend.adapter {
                Some(adapter) => adapter
                    .validate()
                    .map_err(|e| ModelError::InvalidConfig(e.to_string()))?,
                None => return bad("local backend requires an adapter section"),
            },
            BackendKind::Sim => match &self.backend.scenario {
                Some(scenario) => scenario.validate().map_err(ModelError::InvalidConfig)?,
                None => return bad("sim backend requires a scenario"),
            },
            BackendKind::Http => {
                let has_endpoint = self
                    .backend
                    .http
                    .as_ref()
                    .and_then(|h| h.endpoint.as_ref())
                    .is_some_and(|e| !e.is_empty());
                if !has_endpoint {
                    return bad("http backend requires an endpoint");
                }
            }
        }
        Ok(())
    }

    /// Checks the experiment and analysis parameters only; enough to
    /// re-analyse a recorded run.
    pub fn validate_parameters(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_owned()));
        if self.in_call_repeats == 0 {
            return bad("in_call_repeats must be positive");
        }
        if self.call_repeats == 0 {
            return bad("call_repeats must be positive");
        }
        if self.max_parallelism == 0 {
            return bad("max_parallelism must be positive");
        }
        if self.benchmarks_per_call == 0 {
            return bad("benchmarks_per_call must be positive");
        }
        if !(self.per_benchmark_timeout_s > 0.0) {
            return bad("per_benchmark_timeout_s must be positive");
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return bad("ci_level must lie in (0, 1)");
        }
        if self.bootstrap_resamples == 0 {
            return bad("bootstrap_resamples must be positive");
        }
        if self.memory_mb == 0 {
            return bad("memory_mb must be positive");
        }
        if !(self.expected_invocation_s > 0.0) {
            return bad("expected_invocation_s must be positive");
        }
        if !(self.gate_pct >= 0.0) {
            return bad("gate_pct must be non-negative");
        }
        if self.pricing.price_per_gb_s < 0.0 || self.pricing.price_per_request < 0.0 {
            return bad("prices must be non-negative");
        }
        Ok(())
    }
}

/// One raw benchmark timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub benchmark: BenchmarkId,
    pub version: Version,
    pub ns_per_op: f64,
    pub iterations: u64,
    pub instance_id: String,
    pub invocation_id: String,
    pub cold_start: bool,
    pub repeat_index: u32,
    pub wall_time: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    Timeout,
    BuildOrRunError,
    ParseFailure,
    /// The whole invocation failed after retries.
    InvocationFailed,
    /// Straggler invocation abandoned by the orchestrator.
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkFailure {
    pub benchmark: BenchmarkId,
    pub invocation_id: String,
    #[serde(default)]
    pub repeat_index: Option<u32>,
    pub cause: FailureCause,
    #[serde(default)]
    pub detail: String,
}

/// One same-invocation v1/v2 pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub benchmark: BenchmarkId,
    pub t_v1: f64,
    pub t_v2: f64,
    pub instance_id: String,
    pub invocation_id: String,
    pub repeat_index: u32,
    pub rel_diff_pct: f64,
}

/// Positive means v2 is slower.
pub fn rel_diff_pct(t_v1: f64, t_v2: f64) -> f64 {
    if t_v1 == t_v2 {
        return 0.0;
    }
    (t_v2 - t_v1) / t_v1 * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnpairedReason {
    MissingV1,
    MissingV2,
    InstanceMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnpairedEntry {
    pub benchmark: BenchmarkId,
    pub invocation_id: String,
    pub repeat_index: u32,
    pub reason: UnpairedReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pairing {
    /// Ordered by (benchmark, invocation_id, repeat_index).
    pub pairs: Vec<PairedSample>,
    pub unpaired: Vec<UnpairedEntry>,
}

impl Pairing {
    pub fn pairs_for<'a>(&'a self, id: &'a BenchmarkId) -> impl Iterator<Item = &'a PairedSample> + 'a {
        self.pairs.iter().filter(move |p| &p.benchmark == id)
    }
}

/// Pairs v1/v2 measurements sharing (benchmark, invocation, repeat) on one instance.
pub fn pair_measurements(measurements: &[Measurement]) -> Result<Pairing, ModelError> {
    type Key<'a> = (&'a BenchmarkId, &'a str, u32);
    let mut slots: BTreeMap<Key<'_>, [Option<&Measurement>; 2]> = BTreeMap::new();
    for m in measurements {
        let slot = slots
            .entry((&m.benchmark, m.invocation_id.as_str(), m.repeat_index))
            .or_default();
        let idx = match m.version {
            Version::V1 => 0,
            Version::V2 => 1,
        };
        if slot[idx].is_some() {
            return Err(ModelError::DataIntegrity {
                benchmark: m.benchmark.clone(),
                invocation_id: m.invocation_id.clone(),
                repeat_index: m.repeat_index,
                version: m.version,
            });
        }
        slot[idx] = Some(m);
    }

    let mut out = Pairing::default();
    for ((benchmark, invocation_id, repeat_index), slot) in slots {
        let unpaired = |reason| UnpairedEntry {
            benchmark: benchmark.clone(),
            invocation_id: invocation_id.to_owned(),
            repeat_index,
            reason,
        };
        match slot {
            [Some(v1), Some(v2)] if v1.instance_id == v2.instance_id => out.pairs.push(PairedSample {
                benchmark: benchmark.clone(),
                t_v1: v1.ns_per_op,
                t_v2: v2.ns_per_op,
                instance_id: v1.instance_id.clone(),
                invocation_id: invocation_id.to_owned(),
                repeat_index,
                rel_diff_pct: rel_diff_pct(v1.ns_per_op, v2.ns_per_op),
            }),
            [Some(_), Some(_)] => out.unpaired.push(unpaired(UnpairedReason::InstanceMismatch)),
            [Some(_), None] => out.unpaired.push(unpaired(UnpairedReason::MissingV2)),
            [None, Some(_)] => out.unpaired.push(unpaired(UnpairedReason::MissingV1)),
            [None, None] => unreachable!("slot created without a measurement"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    NoChange,
    ChangePositive,
    ChangeNegative,
    Excluded,
}

impl Classification {
    pub fn is_change(self) -> bool {
        matches!(self, Self::ChangePositive | Self::ChangeNegative)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::NoChange => "no change",
            Self::ChangePositive => "CHANGE +",
            Self::ChangeNegative => "CHANGE -",
            Self::Excluded => "excluded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    TooFewResults,
    AllRunsFailed,
}

/// Per-benchmark analysis result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkStats {
    pub benchmark: BenchmarkId,
    pub n: usize,
    pub median_diff_pct: f64,
    pub ci_low_pct: f64,
    pub ci_high_pct: f64,
    pub classification: Classification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<ExclusionReason>,
}

impl BenchmarkStats {
    pub fn ci_size(&self) -> f64 {
        self.ci_high_pct - self.ci_low_pct
    }

    pub fn ci_contains(&self, value: f64) -> bool {
        self.ci_low_pct <= value && value <= self.ci_high_pct
    }
}

/// A complete run: config, raw log and derived statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub versions: VersionPair,
    /// Benchmarks the run was planned for.
    pub benchmarks: Vec<BenchmarkId>,
    /// In arrival order.
    pub measurements: Vec<Measurement>,
    pub failures: Vec<BenchmarkFailure>,
    pub stats: Vec<BenchmarkStats>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub aborted: Option<String>,
}

impl ExperimentResult {
    pub fn stats_for(&self, id: &BenchmarkId) -> Option<&BenchmarkStats> {
        self.stats.iter().find(|s| &s.benchmark == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn id(s: &str) -> BenchmarkId {
        BenchmarkId::parse(s).unwrap()
    }

    fn m(bench: &str, version: Version, ns: f64, inv: &str, rep: u32, inst: &str) -> Measurement {
        Measurement {
            benchmark: id(bench),
            version,
            ns_per_op: ns,
            iterations: 1000,
            instance_id: inst.into(),
            invocation_id: inv.into(),
            cold_start: false,
            repeat_index: rep,
            wall_time: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    #[test]
    fn canonical_ids() {
        let a = canonical_id("BenchmarkAdd", Some("items_100000")).unwrap();
        assert_eq!(a.as_str(), "BenchmarkAdd/items_100000");
        assert_eq!(canonical_id("BenchmarkFoo", None).unwrap().as_str(), "BenchmarkFoo");

        let parsed = BenchmarkId::parse("BenchmarkAdd/items_100000").unwrap();
        assert_eq!(parsed.suite_name(), "BenchmarkAdd");
        assert_eq!(parsed.config_label(), Some("items_100000"));
        assert_eq!(parsed, a);

        assert!(matches!(canonical_id("", Some("x")), Err(ModelError::InvalidId(_))));
        assert!(canonical_id("", None).is_err());
        assert!(BenchmarkId::parse("has space").is_err());
        assert!(BenchmarkId::parse("A/").is_err());
    }

    #[test]
    fn configurations_are_distinct() {
        assert_ne!(id("B/cfg1"), id("B/cfg2"));
        let mut ids = vec![id("B/cfg2"), id("A"), id("B/cfg1")];
        ids.sort();
        assert_eq!(ids, vec![id("A"), id("B/cfg1"), id("B/cfg2")]);
    }

    #[test]
    fn pairs_same_invocation() {
        let ms = vec![
            m("A", Version::V1, 100.0, "i1", 0, "x"),
            m("A", Version::V2, 110.0, "i1", 0, "x"),
            m("A", Version::V1, 200.0, "i1", 1, "x"),
            m("A", Version::V2, 200.0, "i1", 1, "x"),
        ];
        let p = pair_measurements(&ms).unwrap();
        assert_eq!(p.pairs.len(), 2);
        assert!((p.pairs[0].rel_diff_pct - 10.0).abs() < 1e-12);
        assert_eq!(p.pairs[1].rel_diff_pct, 0.0);
        assert!(p.unpaired.is_empty());
    }

    #[test]
    fn missing_version_is_reported() {
        let ms = vec![m("A", Version::V1, 100.0, "i1", 0, "x")];
        let p = pair_measurements(&ms).unwrap();
        assert!(p.pairs.is_empty());
        assert_eq!(p.unpaired.len(), 1);
        assert_eq!(p.unpaired[0].reason, UnpairedReason::MissingV2);
    }

    #[test]
    fn never_pairs_across_instances() {
        let ms = vec![
            m("A", Version::V1, 100.0, "i1", 0, "x"),
            m("A", Version::V2, 100.0, "i1", 0, "y"),
        ];
        let p = pair_measurements(&ms).unwrap();
        assert!(p.pairs.is_empty());
        assert_eq!(p.unpaired[0].reason, UnpairedReason::InstanceMismatch);
    }

    #[test]
    fn duplicates_are_rejected() {
        let ms = vec![
            m("A", Version::V1, 100.0, "i1", 0, "x"),
            m("A", Version::V1, 101.0, "i1", 0, "x"),
        ];
        assert!(matches!(pair_measurements(&ms), Err(ModelError::DataIntegrity { .. })));
    }

    #[test]
    fn default_config_is_baseline() {
        let c = ExperimentConfig::default();
        assert_eq!(c.target_results_per_benchmark(), 45);
        assert_eq!(c.max_parallelism, 150);
        assert_eq!(c.per_benchmark_timeout_s, 20.0);
        assert_eq!(c.min_results, 10);
        assert_eq!(c.ci_level, 0.99);
        assert_eq!(c.memory_mb, 2048);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"call_repeat": 3}"#);
        assert!(err.is_err());
        let ok: ExperimentConfig = serde_json::from_str(r#"{"call_repeats": 45, "in_call_repeats": 1}"#).unwrap();
        assert_eq!(ok.target_results_per_benchmark(), 45);
    }

    #[test]
    fn measurement_json_field_names() {
        let v = serde_json::to_value(m("A/b", Version::V2, 1.5, "i", 2, "inst")).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        let mut expected = vec![
            "benchmark",
            "version",
            "ns_per_op",
            "iterations",
            "instance_id",
            "invocation_id",
            "cold_start",
            "repeat_index",
            "wall_time",
        ];
        expected.sort();
        let mut keys_sorted = keys.clone();
        keys_sorted.sort();
        assert_eq!(keys_sorted, expected);
        assert_eq!(v["version"], "v2");
        assert_eq!(v["wall_time"], "2024-01-01T00:00:00Z");
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn rel_diff_is_scale_invariant(t1 in 1e-3f64..1e9, t2 in 1e-3f64..1e9, k in 1e-3f64..1e3) {
            let base = rel_diff_pct(t1, t2);
            let scaled = rel_diff_pct(t1 * k, t2 * k);
            prop_assert!((base - scaled).abs() <= 1e-9 * base.abs().max(1.0));
        }

        #[test]
        fn rel_diff_zero_iff_equal(t1 in 1e-3f64..1e9, t2 in 1e-3f64..1e9) {
            prop_assert_eq!(rel_diff_pct(t1, t2) == 0.0, t1 == t2);
        }

        #[test]
        fn id_roundtrips(suite in "[A-Za-z][A-Za-z0-9_]{0,12}", cfg in proptest::option::of("[a-z0-9_=.-]{1,10}")) {
            let id = canonical_id(&suite, cfg.as_deref()).unwrap();
            let back = BenchmarkId::parse(id.as_str()).unwrap();
            prop_assert_eq!(back.suite_name(), suite.as_str());
            prop_assert_eq!(back.config_label(), cfg.as_deref());
        }
    }
}
