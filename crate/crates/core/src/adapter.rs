//! Benchmark adapter contract.
//!
//! An adapter is any executable speaking two verbs:
//!
//! ```text
//! <exe> [extra_args..] list --dir <version_dir>
//! <exe> [extra_args..] run  --dir <version_dir> --bench <id> --timeout-s <n>
//! ```
//!
//! `list` prints one benchmark id per line. `run` prints exactly one result
//! line `<benchmark_id>\t<iterations>\t<ns_per_op>`. Any other output line
//! must start with `#`.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BenchmarkId, FailureCause, Version};

pub const SCRATCH_ENV: &str = "ELASTIBENCH_SCRATCH_DIR";
pub const VERSION_ENV: &str = "ELASTIBENCH_VERSION";

/// Grace allowed past a timeout for tearing down the process group.
pub const KILL_GRACE: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub executable_path: PathBuf,
    #[serde(default)]
    pub extra_args: Vec<String>,
    pub v1_dir: PathBuf,
    pub v2_dir: PathBuf,
    /// Shell command run once per fresh instance before its first measurement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_hook: Option<String>,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter executable {0} not found")]
    MissingExecutable(PathBuf),
    #[error("version directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("v1_dir and v2_dir must be distinct paths")]
    SameDirs,
    #[error("adapter exited with {status}: {stderr}")]
    NonZeroExit {
        status: String,
        stdout: String,
        stderr: String,
    },
    #[error("unparseable adapter output line {line:?}: {detail}")]
    ParseFailure { line: String, detail: String },
    #[error("adapter timed out after {0:?}")]
    Timeout(Duration),
    #[error("io error running adapter: {0}")]
    Io(#[from] std::io::Error),
}

impl AdapterSpec {
    pub fn validate(&self) -> Result<(), AdapterError> {
        if !self.executable_path.exists() && which(&self.executable_path).is_none() {
            return Err(AdapterError::MissingExecutable(self.executable_path.clone()));
        }
        for dir in [&self.v1_dir, &self.v2_dir] {
            if !dir.is_dir() {
                return Err(AdapterError::MissingDir(dir.clone()));
            }
        }
        let canon = |p: &Path| p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
        if canon(&self.v1_dir) == canon(&self.v2_dir) {
            return Err(AdapterError::SameDirs);
        }
        Ok(())
    }

    pub fn dir(&self, version: Version) -> &Path {
        match version {
            Version::V1 => &self.v1_dir,
            Version::V2 => &self.v2_dir,
        }
    }

    fn command(&self, version: Version, scratch: Option<&Path>) -> Command {
        let mut cmd = Command::new(&self.executable_path);
        cmd.args(&self.extra_args).env(VERSION_ENV, version.as_str());
        if let Some(dir) = scratch {
            cmd.env(SCRATCH_ENV, dir);
        }
        cmd
    }
}

fn which(exe: &Path) -> Option<PathBuf> {
    if exe.components().count() != 1 {
        return None;
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(exe))
        .find(|candidate| candidate.is_file())
}

/// Output of a finished child process.
#[derive(Debug)]
pub struct ProcessOutput {
    pub status: ExitStatus,
    pub stdout: String,
    pub stderr: String,
    pub elapsed: Duration,
}

/// Runs `cmd` in its own process group, killing the whole group on timeout.
pub fn run_with_timeout(mut cmd: Command, timeout: Duration) -> Result<ProcessOutput, AdapterError> {
    let started = Instant::now();
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()?;
    let pid = child.id() as libc::pid_t;

    let drain = |mut pipe: Box<dyn Read + Send>| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = pipe.read_to_end(&mut buf);
            String::from_utf8_lossy(&buf).into_owned()
        })
    };
    let out_reader = drain(Box::new(child.stdout.take().expect("piped stdout")));
    let err_reader = drain(Box::new(child.stderr.take().expect("piped stderr")));

    let deadline = started + timeout;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if Instant::now() >= deadline {
            break None;
        }
        thread::sleep(Duration::from_millis(5));
    };

    let Some(status) = status else {
        // SAFETY: pid is our child and the leader of its own process group.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
        let _ = child.wait();
        let _ = out_reader.join();
        let _ = err_reader.join();
        return Err(AdapterError::Timeout(timeout));
    };
    // reap stragglers left in the group so pipes close
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(ProcessOutput {
        status,
        stdout,
        stderr,
        elapsed: started.elapsed(),
    })
}

fn payload_lines(stdout: &str) -> impl Iterator<Item = &str> {
    stdout
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Parses one `<id>\t<iterations>\t<ns_per_op>` line.
pub fn parse_result_line(line: &str) -> Result<(BenchmarkId, u64, f64), AdapterError> {
    let fail = |detail: &str| AdapterError::ParseFailure {
        line: line.to_owned(),
        detail: detail.to_owned(),
    };
    let fields: Vec<&str> = line.split('\t').collect();
    let [id, iterations, ns] = fields[..] else {
        return Err(fail("expected 3 tab-separated fields"));
    };
    let id = BenchmarkId::parse(id).map_err(|e| fail(&e.to_string()))?;
    let iterations: u64 = iterations.parse().map_err(|_| fail("iterations is not an integer"))?;
    if iterations == 0 {
        return Err(fail("iterations must be >= 1"));
    }
    let ns: f64 = ns.parse().map_err(|_| fail("ns_per_op is not a number"))?;
    if !(ns.is_finite() && ns > 0.0) {
        return Err(fail("ns_per_op must be positive"));
    }
    Ok((id, iterations, ns))
}

pub fn parse_list_output(stdout: &str) -> Result<Vec<BenchmarkId>, AdapterError> {
    let mut ids = payload_lines(stdout)
        .map(|line| {
            BenchmarkId::parse(line).map_err(|e| AdapterError::ParseFailure {
                line: line.to_owned(),
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    ids.sort();
    ids.dedup();
    Ok(ids)
}

fn check_status(out: ProcessOutput) -> Result<ProcessOutput, AdapterError> {
    if out.status.success() {
        Ok(out)
    } else {
        Err(AdapterError::NonZeroExit {
            status: out.status.to_string(),
            stdout: out.stdout,
            stderr: out.stderr,
        })
    }
}

/// Lists the benchmarks of one version tree in lexicographic order.
pub fn list_benchmarks(spec: &AdapterSpec, version: Version) -> Result<Vec<BenchmarkId>, AdapterError> {
    let mut cmd = spec.command(version, None);
    cmd.arg("list").arg("--dir").arg(spec.dir(version));
    let out = check_status(run_with_timeout(cmd, Duration::from_secs(300))?)?;
    parse_list_output(&out.stdout)
}

/// Benchmarks present in both version trees.
pub fn list_common_benchmarks(spec: &AdapterSpec) -> Result<Vec<BenchmarkId>, AdapterError> {
    let v1 = list_benchmarks(spec, Version::V1)?;
    let v2 = list_benchmarks(spec, Version::V2)?;
    Ok(v1.into_iter().filter(|id| v2.binary_search(id).is_ok()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub iterations: u64,
    pub ns_per_op: f64,
    pub elapsed: Duration,
}

/// A failed single benchmark-version run.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{cause:?}: {detail}")]
pub struct RunFailure {
    pub cause: FailureCause,
    pub detail: String,
}

fn format_timeout(timeout: Duration) -> String {
    let secs = timeout.as_secs_f64();
    if secs.fract() == 0.0 {
        format!("{}", secs as u64)
    } else {
        format!("{secs}")
    }
}

/// Runs one benchmark on one version; wall-clock bounded by `timeout`.
pub fn run_benchmark(
    spec: &AdapterSpec,
    version: Version,
    benchmark: &BenchmarkId,
    timeout: Duration,
    scratch: Option<&Path>,
) -> Result<RunOutput, RunFailure> {
    let mut cmd = spec.command(version, scratch);
    cmd.arg("run")
        .arg("--dir")
        .arg(spec.dir(version))
        .arg("--bench")
        .arg(benchmark.as_str())
        .arg("--timeout-s")
        .arg(format_timeout(timeout));

    let out = match run_with_timeout(cmd, timeout) {
        Ok(out) => out,
        Err(AdapterError::Timeout(t)) => {
            return Err(RunFailure {
                cause: FailureCause::Timeout,
                detail: format!("interrupted after {t:?}"),
            })
        }
        Err(e) => {
            return Err(RunFailure {
                cause: FailureCause::BuildOrRunError,
                detail: e.to_string(),
            })
        }
    };
    let out = check_status(out).map_err(|e| RunFailure {
        cause: FailureCause::BuildOrRunError,
        detail: e.to_string(),
    })?;
    parse_run_output(&out.stdout, benchmark).map(|(iterations, ns_per_op)| RunOutput {
        iterations,
        ns_per_op,
        elapsed: out.elapsed,
    })
}

pub fn parse_run_output(stdout: &str, benchmark: &BenchmarkId) -> Result<(u64, f64), RunFailure> {
    let parse_failure = |detail: String| RunFailure {
        cause: FailureCause::ParseFailure,
        detail,
    };
    let lines: Vec<&str> = payload_lines(stdout).collect();
    let [line] = lines[..] else {
        return Err(parse_failure(format!(
            "expected exactly one result line, got {}",
            lines.len()
        )));
    };
    let (id, iterations, ns) = parse_result_line(line).map_err(|e| parse_failure(e.to_string()))?;
    if &id != benchmark {
        return Err(parse_failure(format!("result for {id}, expected {benchmark}")));
    }
    Ok((iterations, ns))
}

/// Runs the warm-up hook via `sh -c`.
pub fn run_warmup(spec: &AdapterSpec, scratch: &Path, timeout: Duration) -> Result<Duration, AdapterError> {
    let Some(hook) = &spec.warmup_hook else {
        return Ok(Duration::ZERO);
    };
    let mut cmd = Command::new("sh");
    cmd.arg("-c").arg(hook).env(SCRATCH_ENV, scratch);
    let out = check_status(run_with_timeout(cmd, timeout)?)?;
    Ok(out.elapsed)
}
