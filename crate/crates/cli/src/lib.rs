//! Job runner behind the `eigenmatch` binary.
//!
//! A job is a JSON document
//!
//! ```text
//! { "version": "eigenmatch.job/1", "subcommand": "edmdm", "seed": 7,
//!   "io": "out/ex5", "payload": { ... } }
//! ```
//!
//! validated up front (unknown fields are errors), dispatched to the owning
//! module, and written out as CSV/JSON artifacts plus a `report.json`.
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure or golden
//! mismatch.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub mod jobs;
pub mod reproduce;

/// Schema tag accepted in `JobConfig::version`.
pub const JOB_VERSION: &str = "eigenmatch.job/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Keig,
    Match,
    Edmd,
    Edmdm,
    Train,
    Levelset,
    Defect,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Keig => "keig",
            Subcommand::Match => "match",
            Subcommand::Edmd => "edmd",
            Subcommand::Edmdm => "edmdm",
            Subcommand::Train => "train",
            Subcommand::Levelset => "levelset",
            Subcommand::Defect => "defect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub version: String,
    pub subcommand: Subcommand,
    pub seed: u64,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub io: Option<PathBuf>,
    pub payload: Value,
}

impl JobConfig {
    /// Parses and validates a job, applying `--seed` and `--out` overrides.
    pub fn parse(text: &str, seed: Option<u64>, out: Option<&Path>) -> Result<Self, CliError> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| CliError::invalid(format!("config: {e}")))?;
        let obj = v.as_object_mut().ok_or_else(|| CliError::invalid("config must be a JSON object"))?;
        if let Some(s) = seed {
            obj.insert("seed".into(), s.into());
        }
        if let Some(o) = out {
            obj.insert("io".into(), Value::String(o.to_string_lossy().into_owned()));
        }
        match obj.get("version").and_then(Value::as_str) {
            Some(JOB_VERSION) => {}
            Some(other) => {
                return Err(CliError::invalid(format!(
                    "config version `{other}` is not supported; this build reads `{JOB_VERSION}`"
                )))
            }
            None => return Err(CliError::invalid(format!("config is missing `version` (expected `{JOB_VERSION}`)"))),
        }
        serde_json::from_value(v).map_err(|e| CliError::invalid(format!("config: {e}")))
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        self.io.as_deref().ok_or_else(|| CliError::invalid("no output directory: set `io` or pass --out"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    GoldenMismatch,
}

/// One golden comparison in a reproduction run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">="`.
    pub op: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), value, op: "<=", threshold, pass: value <= threshold }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), value, op: ">=", threshold, pass: value >= threshold }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "ok  " } else { "FAIL" };
        write!(f, "{tag} {}: {:e} {} {:e}", self.name, self.value, self.op, self.threshold)
    }
}

/// Everything a job produced. The wall time is kept out of the serialized
/// report so reruns stay byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub job: String,
    pub status: Status,
    /// Config echo without the output directory.
    pub config: Value,
    pub artifacts: Vec<String>,
    pub metrics: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Ok => 0,
            Status::GoldenMismatch => 3,
        }
    }
}

/// Output of a job before anything touches the disk.
#[derive(Debug, Default)]
pub struct Output {
    pub files: Vec<(String, String)>,
    pub metrics: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
}

impl Output {
    pub fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn metric(&mut self, name: &str, v: impl Serialize) {
        self.metrics.insert(name.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    pub fn json(&mut self, name: &str, v: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(v).map_err(|e| CliError::numerical(e.to_string()))?;
        self.file(name, text + "\n");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError { code: 2, message: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError { code: 3, message: msg.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<eigenmatch::Error> for CliError {
    fn from(e: eigenmatch::Error) -> Self {
        let code = if e.is_validation() { 2 } else { 3 };
        CliError { code, message: e.to_string() }
    }
}

/// Decodes a subcommand payload, rejecting unknown fields.
pub fn payload<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T, CliError> {
    serde_json::from_value(v.clone()).map_err(|e| CliError::invalid(format!("payload: {e}")))
}

fn finish(job: String, config: Value, out_dir: &Path, out: Output, started: Instant) -> Result<RunReport, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::invalid(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut artifacts = Vec::new();
    for (name, text) in &out.files {
        std::fs::write(out_dir.join(name), text)
            .map_err(|e| CliError::invalid(format!("cannot write {name}: {e}")))?;
        artifacts.push(name.clone());
    }
    artifacts.push("report.json".into());
    let status = if out.checks.iter().all(|c| c.pass) { Status::Ok } else { Status::GoldenMismatch };
    let report = RunReport {
        version: JOB_VERSION,
        job,
        status,
        config,
        artifacts,
        metrics: out.metrics,
        checks: out.checks,
        wall_time: started.elapsed(),
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::numerical(e.to_string()))? + "\n";
    std::fs::write(out_dir.join("report.json"), text)
        .map_err(|e| CliError::invalid(format!("cannot write report.json: {e}")))?;
    Ok(report)
}

/// Runs a validated job and writes its artifacts. Nothing is written when
/// the job fails.
pub fn run(job: &JobConfig) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let dir = job.out_dir()?.to_path_buf();
    let out = jobs::dispatch(job)?;
    let mut echo = job.clone();
    echo.io = None;
    let config = serde_json::to_value(&echo).map_err(|e| CliError::numerical(e.to_string()))?;
    finish(job.subcommand.name().to_string(), config, &dir, out, started)
}

/// Runs one entry of the reproduction suite into `dir`.
pub fn run_reproduce(name: &str, seed: Option<u64>, dir: &Path) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let entry = reproduce::Entry::parse(name)?;
    let seed = seed.unwrap_or(reproduce::DEFAULT_SEED);
    let out = entry.run(seed)?;
    let config = serde_json::json!({ "reproduce": entry.name(), "seed": seed });
    finish(format!("reproduce {}", entry.name()), config, dir, out, started)
}
