use std::fs;
use std::path::{Path, PathBuf};

use elastibench::adapter::list_common_benchmarks;
use elastibench::backends::sim::SimulatorScenario;
use elastibench::model::{BackendKind, BenchmarkId, ExperimentConfig, HttpSettings, ModelError, VersionPair};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENDPOINT_ENV: &str = "ELASTIBENCH_ENDPOINT";

/// The `--config` document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfigFile {
    #[serde(default)]
    pub experiment: ExperimentConfig,
    pub versions: VersionPair,
    /// Defaults to the scenario's benchmarks (sim) or the adapter listing (local).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmarks: Option<Vec<BenchmarkId>>,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Backend to run on
    #[arg(long, value_parser = ["local", "sim", "http"])]
    pub backend: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regression threshold in percent for the exit status
    #[arg(long)]
    pub gate_pct: Option<f64>,
    /// Maximum in-flight invocations
    #[arg(long)]
    pub parallelism: Option<u32>,
    #[arg(long)]
    pub repeats_in_call: Option<u32>,
    #[arg(long)]
    pub call_repeats: Option<u32>,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(kind) = &self.backend {
            config.backend.kind = kind.parse().map_err(|e: ModelError| CliError::Invalid(e.to_string()))?;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.gate_pct {
            config.gate_pct = v;
        }
        if let Some(v) = self.parallelism {
            config.max_parallelism = v;
        }
        if let Some(v) = self.repeats_in_call {
            config.in_call_repeats = v;
        }
        if let Some(v) = self.call_repeats {
            config.call_repeats = v;
        }
        Ok(())
    }
}

/// Relative adapter paths are taken from the config file's directory.
fn resolve_paths(config: &mut ExperimentConfig, base: &Path) {
    let Some(adapter) = config.backend.adapter.as_mut() else {
        return;
    };
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if adapter.executable_path.components().count() > 1 {
        resolve(&mut adapter.executable_path);
    }
    resolve(&mut adapter.v1_dir);
    resolve(&mut adapter.v2_dir);
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<CliConfigFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let mut file: CliConfigFile =
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_paths(&mut file.experiment, base);
    overrides.apply(&mut file.experiment)?;
    if file.experiment.backend.kind == BackendKind::Http {
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            file.experiment
                .backend
                .http
                .get_or_insert_with(HttpSettings::default)
                .endpoint = Some(endpoint);
        }
    }
    file.experiment
        .validate()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    file.versions.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(file)
}

/// Benchmarks to plan for, sorted and deduplicated.
pub fn benchmarks(file: &CliConfigFile) -> Result<Vec<BenchmarkId>, CliError> {
    let backend = &file.experiment.backend;
    let mut ids = match (&file.benchmarks, backend.kind) {
        (Some(ids), _) => ids.clone(),
        (None, BackendKind::Sim) => backend
            .scenario
            .as_ref()
            .map(SimulatorScenario::benchmark_ids)
            .unwrap_or_default(),
        (None, BackendKind::Local) => {
            let adapter = backend.adapter.as_ref().expect("validated local config");
            list_common_benchmarks(adapter).map_err(|e| CliError::Invalid(format!("listing benchmarks: {e}")))?
        }
        (None, BackendKind::Http) => {
            return Err(CliError::Invalid(
                "http backend needs an explicit benchmarks list".into(),
            ));
        }
    };
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(CliError::Invalid("no benchmarks to run".into()));
    }
    Ok(ids)
}
