//! Bootstrap confidence intervals of the median relative difference and the
//! metrics built on them.
//!
//! The percentile bootstrap resamples the *sorted* input. Because the input is
//! sorted, the median of a resample is determined by the middle order
//! statistics of the drawn indices, so each resample costs O(n) without any
//! sorting, and the result does not depend on input order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    pair_measurements, BenchmarkFailure, BenchmarkId, BenchmarkStats, Classification, ExclusionReason,
    ExperimentConfig, Measurement, MedianEstimator, ModelError, PairedSample, Pairing,
};
use crate::seed;

pub const DEFAULT_RESAMPLES: u32 = 10_000;
/// Below this many resamples results are flagged as not reportable.
pub const MIN_REPORTABLE_RESAMPLES: u32 = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("cannot bootstrap an empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("ci level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("resamples must be positive")]
    NoResamples,
    #[error("the experiments share no comparable benchmarks")]
    NoSharedBenchmarks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    #[default]
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: u32,
    pub ci_level: f64,
    pub method: CiMethod,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            ci_level: 0.99,
            method: CiMethod::Percentile,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn is_reportable(&self) -> bool {
        self.resamples >= MIN_REPORTABLE_RESAMPLES
    }

    fn validate(&self) -> Result<(), StatsError> {
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(StatsError::InvalidLevel(self.ci_level));
        }
        if self.resamples == 0 {
            return Err(StatsError::NoResamples);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianCi {
    pub median: f64,
    pub low: f64,
    pub high: f64,
}

impl MedianCi {
    pub fn size(&self) -> f64 {
        self.high - self.low
    }

    /// Endpoints count as inside.
    pub fn contains(&self, value: f64) -> bool {
        self.low <= value && value <= self.high
    }

    pub fn overlaps(&self, other: &MedianCi) -> bool {
        self.low <= other.high && other.low <= self.high
    }
}

impl From<&BenchmarkStats> for MedianCi {
    fn from(s: &BenchmarkStats) -> Self {
        Self {
            median: s.median_diff_pct,
            low: s.ci_low_pct,
            high: s.ci_high_pct,
        }
    }
}

/// Median of sorted data; mean of the middle two for even lengths.
pub fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(median_sorted(&v))
}

/// Zero-based ranks of the lower and upper percentile endpoints among
/// `resamples` sorted bootstrap statistics.
pub fn percentile_ranks(resamples: usize, ci_level: f64) -> (usize, usize) {
    let tail = (1.0 - ci_level) / 2.0;
    let lower = ((tail * resamples as f64) + 1e-9).floor() as usize;
    let lower = lower.min(resamples - 1);
    (lower, resamples - 1 - lower)
}

/// Median of one resample drawn from `sorted` (with replacement).
fn resample_median(sorted: &[f64], counts: &mut [u32], rng: &mut ChaCha8Rng) -> f64 {
    let n = sorted.len();
    counts.iter_mut().for_each(|c| *c = 0);
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    let lo_rank = (n - 1) / 2;
    let hi_rank = n / 2;
    let mut seen = 0usize;
    let mut lo = None;
    for (idx, &c) in counts.iter().enumerate() {
        seen += c as usize;
        if lo.is_none() && seen > lo_rank {
            lo = Some(idx);
        }
        if seen > hi_rank {
            let lo = lo.expect("lo rank precedes hi rank");
            return if lo == idx {
                sorted[idx]
            } else {
                (sorted[lo] + sorted[idx]) / 2.0
            };
        }
    }
    unreachable!("counts sum to n")
}

fn percentile_interval(mut stats: Vec<f64>, ci_level: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let (lo, hi) = percentile_ranks(stats.len(), ci_level);
    (stats[lo], stats[hi])
}

/// Sample median with a percentile bootstrap CI; deterministic under `cfg.seed`.
///
/// The interval is widened to include the sample median if resampling noise
/// left it just outside.
pub fn bootstrap_median_ci(samples: &[f64], cfg: &BootstrapConfig) -> Result<MedianCi, StatsError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = median_sorted(&sorted);

    let mut rng = seed::rng(cfg.seed);
    let mut counts = vec![0u32; sorted.len()];
    let medians = (0..cfg.resamples)
        .map(|_| resample_median(&sorted, &mut counts, &mut rng))
        .collect();
    let (low, high) = percentile_interval(medians, cfg.ci_level);
    Ok(MedianCi {
        median,
        low: low.min(median),
        high: high.max(median),
    })
}

fn ratio_of_medians_pct(v1: &mut [f64], v2: &mut [f64]) -> f64 {
    v1.sort_by(f64::total_cmp);
    v2.sort_by(f64::total_cmp);
    let m1 = median_sorted(v1);
    let m2 = median_sorted(v2);
    crate::model::rel_diff_pct(m1, m2)
}

/// Relative difference of per-version medians, bootstrapped over whole pairs.
pub fn bootstrap_difference_of_medians_ci(pairs: &[(f64, f64)], cfg: &BootstrapConfig) -> Result<MedianCi, StatsError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = sorted.len();
    let (mut v1, mut v2): (Vec<f64>, Vec<f64>) = sorted.iter().copied().unzip();
    let estimate = ratio_of_medians_pct(&mut v1, &mut v2);

    let mut rng = seed::rng(cfg.seed);
    let stats = (0..cfg.resamples)
        .map(|_| {
            for i in 0..n {
                let (a, b) = sorted[rng.random_range(0..n)];
                v1[i] = a;
                v2[i] = b;
            }
            ratio_of_medians_pct(&mut v1, &mut v2)
        })
        .collect();
    let (low, high) = percentile_interval(stats, cfg.ci_level);
    Ok(MedianCi {
        median: estimate,
        low: low.min(estimate),
        high: high.max(estimate),
    })
}

/// A CI touching zero counts as overlapping it.
pub fn classify(ci: &MedianCi, n: usize, min_results: u32) -> Classification {
    if n < min_results as usize {
        Classification::Excluded
    } else if ci.low > 0.0 {
        Classification::ChangePositive
    } else if ci.high < 0.0 {
        Classification::ChangeNegative
    } else {
        Classification::NoChange
    }
}

fn bootstrap_config(config: &ExperimentConfig, seed: u64) -> BootstrapConfig {
    BootstrapConfig {
        resamples: config.bootstrap_resamples,
        ci_level: config.ci_level,
        method: CiMethod::Percentile,
        seed,
    }
}

fn estimate(pairs: &[&PairedSample], config: &ExperimentConfig, seed: u64) -> Result<MedianCi, StatsError> {
    let cfg = bootstrap_config(config, seed);
    match config.median_estimator {
        MedianEstimator::PairwiseMedian => {
            let diffs: Vec<f64> = pairs.iter().map(|p| p.rel_diff_pct).collect();
            bootstrap_median_ci(&diffs, &cfg)
        }
        MedianEstimator::DifferenceOfMedians => {
            let raw: Vec<(f64, f64)> = pairs.iter().map(|p| (p.t_v1, p.t_v2)).collect();
            bootstrap_difference_of_medians_ci(&raw, &cfg)
        }
    }
}

/// Statistics of one benchmark from its paired samples.
pub fn benchmark_stats(
    benchmark: &BenchmarkId,
    pairs: &[&PairedSample],
    config: &ExperimentConfig,
) -> Result<BenchmarkStats, StatsError> {
    let n = pairs.len();
    if n == 0 {
        return Ok(BenchmarkStats {
            benchmark: benchmark.clone(),
            n: 0,
            median_diff_pct: 0.0,
            ci_low_pct: 0.0,
            ci_high_pct: 0.0,
            classification: Classification::Excluded,
            exclusion_reason: Some(ExclusionReason::AllRunsFailed),
        });
    }
    let ci = estimate(
        pairs,
        config,
        seed::derive(config.seed, &["bootstrap", benchmark.as_str()]),
    )?;
    let classification = classify(&ci, n, config.min_results);
    Ok(BenchmarkStats {
        benchmark: benchmark.clone(),
        n,
        median_diff_pct: ci.median,
        ci_low_pct: ci.low,
        ci_high_pct: ci.high,
        classification,
        exclusion_reason: (classification == Classification::Excluded).then_some(ExclusionReason::TooFewResults),
    })
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Data(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// Sorted by benchmark id.
    pub stats: Vec<BenchmarkStats>,
    pub pairing: Pairing,
}

/// Recomputes all per-benchmark statistics from the raw log.
pub fn analyze(
    config: &ExperimentConfig,
    planned: &[BenchmarkId],
    measurements: &[Measurement],
    failures: &[BenchmarkFailure],
) -> Result<Analysis, AnalysisError> {
    let pairing = pair_measurements(measurements)?;
    let mut grouped: BTreeMap<&BenchmarkId, Vec<&PairedSample>> = BTreeMap::new();
    for id in planned
        .iter()
        .chain(measurements.iter().map(|m| &m.benchmark))
        .chain(failures.iter().map(|f| &f.benchmark))
    {
        grouped.entry(id).or_default();
    }
    for p in &pairing.pairs {
        grouped.entry(&p.benchmark).or_default().push(p);
    }
    let stats = grouped
        .into_iter()
        .map(|(id, pairs)| benchmark_stats(id, &pairs, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Analysis { stats, pairing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AgreeChange,
    AgreeNoChange,
    DisagreeDirection,
    DisagreeDetection,
}

pub fn verdict(a: Classification, b: Classification) -> Option<Verdict> {
    use Classification::*;
    Some(match (a, b) {
        (Excluded, _) | (_, Excluded) => return None,
        (NoChange, NoChange) => Verdict::AgreeNoChange,
        (ChangePositive, ChangePositive) | (ChangeNegative, ChangeNegative) => Verdict::AgreeChange,
        (ChangePositive, ChangeNegative) | (ChangeNegative, ChangePositive) => Verdict::DisagreeDirection,
        (NoChange, _) | (_, NoChange) => Verdict::DisagreeDetection,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkVerdict {
    pub benchmark: BenchmarkId,
    pub verdict: Verdict,
    pub a_median_pct: f64,
    pub b_median_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PossibleChange {
    pub benchmark: BenchmarkId,
    pub magnitude_pct: f64,
}

/// Agreement and coverage between two analysed experiments.
///
/// Coverages are `None` when no benchmark qualifies for their denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub verdicts: Vec<BenchmarkVerdict>,
    pub compared_n: usize,
    pub agreement_fraction: f64,
    /// Share of benchmarks where b detects a change whose CI holds a's median.
    pub one_sided_coverage_ab: Option<f64>,
    /// Share of benchmarks where a detects a change whose CI holds b's median.
    pub one_sided_coverage_ba: Option<f64>,
    /// Among benchmarks both detect as changed, share where each median lies
    /// in the other's CI.
    pub two_sided_coverage: Option<f64>,
    pub possible_changes: Vec<PossibleChange>,
}

impl ComparisonReport {
    pub fn count(&self, verdict: Verdict) -> usize {
        self.verdicts.iter().filter(|v| v.verdict == verdict).count()
    }
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn compare_experiments(a: &[BenchmarkStats], b: &[BenchmarkStats]) -> Result<ComparisonReport, StatsError> {
    let b_by_id: BTreeMap<&BenchmarkId, &BenchmarkStats> = b.iter().map(|s| (&s.benchmark, s)).collect();
    let mut shared: Vec<(&BenchmarkStats, &BenchmarkStats, Verdict)> = a
        .iter()
        .filter_map(|sa| {
            let sb = b_by_id.get(&sa.benchmark)?;
            verdict(sa.classification, sb.classification).map(|v| (sa, *sb, v))
        })
        .collect();
    if shared.is_empty() {
        return Err(StatsError::NoSharedBenchmarks);
    }
    shared.sort_by(|x, y| x.0.benchmark.cmp(&y.0.benchmark));

    let agree = shared
        .iter()
        .filter(|(_, _, v)| matches!(v, Verdict::AgreeChange | Verdict::AgreeNoChange))
        .count();

    let (mut ab_hits, mut ab_total, mut ba_hits, mut ba_total, mut two_hits, mut two_total) = (0, 0, 0, 0, 0, 0);
    for (sa, sb, _) in &shared {
        let a_in_b = sb.ci_contains(sa.median_diff_pct);
        let b_in_a = sa.ci_contains(sb.median_diff_pct);
        if sb.classification.is_change() {
            ab_total += 1;
            ab_hits += usize::from(a_in_b);
        }
        if sa.classification.is_change() {
            ba_total += 1;
            ba_hits += usize::from(b_in_a);
        }
        if sa.classification.is_change() && sb.classification.is_change() {
            two_total += 1;
            two_hits += usize::from(a_in_b && b_in_a);
        }
    }

    let possible_changes = shared
        .iter()
        .filter(|(_, _, v)| *v == Verdict::DisagreeDetection)
        .map(|(sa, sb, _)| {
            let magnitude = [sa, sb]
                .iter()
                .filter(|s| s.classification.is_change())
                .map(|s| s.median_diff_pct.abs())
                .fold(0.0, f64::max);
            PossibleChange {
                benchmark: sa.benchmark.clone(),
                magnitude_pct: magnitude,
            }
        })
        .collect();

    Ok(ComparisonReport {
        verdicts: shared
            .iter()
            .map(|(sa, sb, v)| BenchmarkVerdict {
                benchmark: sa.benchmark.clone(),
                verdict: *v,
                a_median_pct: sa.median_diff_pct,
                b_median_pct: sb.median_diff_pct,
            })
            .collect(),
        compared_n: shared.len(),
        agreement_fraction: agree as f64 / shared.len() as f64,
        one_sided_coverage_ab: fraction(ab_hits, ab_total),
        one_sided_coverage_ba: fraction(ba_hits, ba_total),
        two_sided_coverage: fraction(two_hits, two_total),
        possible_changes,
    })
}

/// Reports carry four decimals, so CI sizes closer than this count as equal.
pub const CI_SIZE_RESOLUTION: f64 = 1e-4;

/// First prefix whose CI size is within `reference_size`.
///
/// `steps` holds `(k, ci_size)` in increasing `k`.
pub fn first_prefix_within(steps: &[(usize, f64)], reference_size: f64) -> Option<usize> {
    steps
        .iter()
        .find(|(_, size)| *size <= reference_size + CI_SIZE_RESOLUTION)
        .map(|(k, _)| *k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatsEntry {
    pub benchmark: BenchmarkId,
    pub full: MedianCi,
    pub reference: MedianCi,
    /// Full-data CI shares at least one value with the reference CI.
    pub eligible: bool,
    /// Smallest prefix size reaching the reference CI size.
    pub min_k: Option<usize>,
    pub steps: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatsStudy {
    pub entries: Vec<RepeatsEntry>,
    pub skipped: Vec<(BenchmarkId, String)>,
    pub curve: Vec<CurvePoint>,
}

impl RepeatsStudy {
    /// Fraction of eligible benchmarks done by prefix size `k`.
    pub fn fraction_at(&self, k: usize) -> f64 {
        let eligible: Vec<_> = self.entries.iter().filter(|e| e.eligible).collect();
        if eligible.is_empty() {
            return 0.0;
        }
        let done = eligible.iter().filter(|e| e.min_k.is_some_and(|m| m <= k)).count();
        done as f64 / eligible.len() as f64
    }

    pub fn eligible_count(&self) -> usize {
        self.entries.iter().filter(|e| e.eligible).count()
    }
}

/// How many results each benchmark needs until its CI is no wider than the
/// reference CI.
///
/// Prefixes grow one invocation at a time in planned call order (invocation
/// ids sort in plan order) and start at `min_results`.
pub fn repeats_for_ci_size(
    config: &ExperimentConfig,
    pairing: &Pairing,
    reference: &[BenchmarkStats],
) -> Result<RepeatsStudy, StatsError> {
    let mut by_id: BTreeMap<&BenchmarkId, Vec<&PairedSample>> = BTreeMap::new();
    for p in &pairing.pairs {
        by_id.entry(&p.benchmark).or_default().push(p);
    }
    let reference: BTreeMap<&BenchmarkId, &BenchmarkStats> = reference.iter().map(|s| (&s.benchmark, s)).collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let min_prefix = (config.min_results as usize).max(1);
    for (id, pairs) in by_id {
        let Some(reference) = reference.get(id) else {
            skipped.push((id.clone(), "missing from reference".to_owned()));
            continue;
        };
        if reference.classification == Classification::Excluded {
            skipped.push((id.clone(), "excluded in reference".to_owned()));
            continue;
        }
        if pairs.len() < reference.n || pairs.len() < min_prefix {
            skipped.push((
                id.clone(),
                format!("only {} results, reference has {}", pairs.len(), reference.n),
            ));
            continue;
        }

        let mut ends: Vec<usize> = (1..pairs.len())
            .filter(|&i| pairs[i].invocation_id != pairs[i - 1].invocation_id)
            .collect();
        ends.push(pairs.len());
        // same stream as the full analysis, so the last prefix reproduces it
        let seed = seed::derive(config.seed, &["bootstrap", id.as_str()]);
        let mut steps = Vec::new();
        let mut last = None;
        for k in ends.into_iter().filter(|&k| k >= min_prefix) {
            let ci = estimate(&pairs[..k], config, seed)?;
            steps.push((k, ci.size()));
            last = Some(ci);
        }
        let full = last.expect("at least the full prefix");
        let reference_ci = MedianCi::from(*reference);
        let eligible = full.overlaps(&reference_ci);
        entries.push(RepeatsEntry {
            benchmark: id.clone(),
            full,
            reference: reference_ci,
            eligible,
            min_k: if eligible {
                first_prefix_within(&steps, reference_ci.size())
            } else {
                None
            },
            steps,
        });
    }

    let max_k = entries
        .iter()
        .filter_map(|e| e.steps.last().map(|s| s.0))
        .max()
        .unwrap_or(0);
    let mut study = RepeatsStudy {
        entries,
        skipped,
        curve: Vec::new(),
    };
    if study.eligible_count() > 0 {
        study.curve = (1..=max_k)
            .map(|k| CurvePoint {
                k,
                fraction: study.fraction_at(k),
            })
            .collect();
    }
    Ok(study)
}
