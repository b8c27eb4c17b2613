//! Configuration-driven experiment runner.
//!
//! A run resolves an [`ExperimentConfig`] from per-experiment defaults, an
//! optional `key = value` file and overrides, executes the experiment and
//! writes `manifest.json`, `trajectory.csv`, `summary.json` and `plot.svg`
//! into the output directory.

mod experiments;
mod plot;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::trajectory::TrajectoryLog;

pub use plot::{emit_plot, PlotSpec};

/// Exit code for a bad configuration or command line.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for a numerical divergence.
pub const EXIT_DIVERGED: i32 = 3;
/// Exit code when `--check` is set and a check fails.
pub const EXIT_CHECK_FAILED: i32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    BpRate,
    BpMemorize,
    BpSweep,
    MmdSpectral,
    MmdSweep,
    InterpGauss,
    InterpTrain,
    DiffusionGauss,
    CollapseCase1,
    CollapseCase2,
    Landscape,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::BpRate,
        Experiment::BpMemorize,
        Experiment::BpSweep,
        Experiment::MmdSpectral,
        Experiment::MmdSweep,
        Experiment::InterpGauss,
        Experiment::InterpTrain,
        Experiment::DiffusionGauss,
        Experiment::CollapseCase1,
        Experiment::CollapseCase2,
        Experiment::Landscape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::BpRate => "bp_rate",
            Experiment::BpMemorize => "bp_memorize",
            Experiment::BpSweep => "bp_sweep",
            Experiment::MmdSpectral => "mmd_spectral",
            Experiment::MmdSweep => "mmd_sweep",
            Experiment::InterpGauss => "interp_gauss",
            Experiment::InterpTrain => "interp_train",
            Experiment::DiffusionGauss => "diffusion_gauss",
            Experiment::CollapseCase1 => "collapse_case1",
            Experiment::CollapseCase2 => "collapse_case2",
            Experiment::Landscape => "landscape",
        }
    }

    /// Every accepted parameter with its default value.
    pub fn defaults(self) -> &'static [(&'static str, &'static str)] {
        experiments::defaults(self)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// A fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// Parse a flat `key = value` file. Blank lines and `#` comments are ignored.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Defaults for `experiment`, seed 1, output under `out/<name>`.
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            params: experiment
                .defaults()
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            seed: 1,
            out_dir: PathBuf::from("out").join(experiment.name()),
        }
    }

    /// Set one key. `seed` and `out` are accepted alongside the
    /// experiment's own parameters; anything else is rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: `{value}` is not an integer")))?
            }
            "out" => self.out_dir = PathBuf::from(value),
            _ => match self.params.get_mut(key) {
                Some(slot) => *slot = value.to_string(),
                None => {
                    return Err(Error::Config(format!(
                        "unknown key `{key}` for experiment {}",
                        self.experiment
                    )))
                }
            },
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_config_text(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.params
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse `{raw}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parsed(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        // accept `1e6`-style integers too
        let v: f64 = self.parsed(key)?;
        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
            return Err(Error::Config(format!("{key}: expected a nonnegative integer")));
        }
        Ok(v as usize)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parsed(key)
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.raw(key)
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse `{raw}`")))
            })
            .collect()
    }

    pub fn manifest(&self) -> Value {
        json!({
            "experiment": self.experiment.name(),
            "seed": self.seed,
            "params": self.params,
            "out_dir": self.out_dir.display().to_string(),
            "version": env!("CARGO_PKG_VERSION"),
        })
    }
}

/// A named pass/fail assertion of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// What an experiment hands back to the runner.
#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub log: TrajectoryLog,
    pub plot: Option<PlotSpec>,
    pub summary: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    /// Additional files written next to the standard artifacts.
    pub extra: Vec<(String, String)>,
    pub diverged: Option<String>,
}

impl Outcome {
    pub fn new(log: TrajectoryLog) -> Self {
        Self {
            log,
            plot: None,
            summary: BTreeMap::new(),
            checks: Vec::new(),
            extra: Vec::new(),
            diverged: None,
        }
    }

    pub fn put(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.into(), value.into());
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }
}

/// Result of a completed (possibly diverged) run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Value,
    pub checks: Vec<Check>,
    pub diverged: Option<String>,
    pub out_dir: PathBuf,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Process exit code for this report.
    pub fn exit_code(&self, check: bool) -> i32 {
        if self.diverged.is_some() {
            EXIT_DIVERGED
        } else if check && !self.all_passed() {
            EXIT_CHECK_FAILED
        } else {
            0
        }
    }
}

/// Exit code for an error raised before or during a run.
pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Diverged(_) | Error::BlowUp(_) => EXIT_DIVERGED,
        _ => 1,
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Run an experiment and write its artifacts. With `threads`, internal
/// parallelism uses a dedicated pool of that size.
pub fn run(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunReport> {
    std::fs::create_dir_all(&config.out_dir)?;
    write_json(&config.out_dir.join("manifest.json"), &config.manifest())?;
    let outcome = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| experiments::execute(config)),
        None => experiments::execute(config),
    }?;
    let dir = &config.out_dir;
    std::fs::write(dir.join("trajectory.csv"), outcome.log.to_csv())?;
    if let Some(spec) = &outcome.plot {
        if !outcome.log.is_empty() {
            std::fs::write(dir.join("plot.svg"), emit_plot(&outcome.log, spec)?)?;
        }
    }
    for (name, content) in &outcome.extra {
        std::fs::write(dir.join(name), content)?;
    }
    let mut summary = serde_json::Map::new();
    summary.insert("experiment".into(), json!(config.experiment.name()));
    summary.insert(
        "status".into(),
        json!(if outcome.diverged.is_some() { "diverged" } else { "completed" }),
    );
    if let Some(msg) = &outcome.diverged {
        summary.insert("divergence".into(), json!(msg));
    }
    if let Some(row) = outcome.log.last_row() {
        let last: serde_json::Map<String, Value> = outcome
            .log
            .names()
            .iter()
            .zip(row)
            .map(|(k, v)| (k.clone(), json!(v)))
            .collect();
        summary.insert("final".into(), Value::Object(last));
    }
    for (k, v) in &outcome.summary {
        summary.insert(k.clone(), v.clone());
    }
    let checks: serde_json::Map<String, Value> = outcome
        .checks
        .iter()
        .map(|c| (c.name.clone(), json!({"passed": c.passed, "detail": c.detail})))
        .collect();
    summary.insert("checks".into(), Value::Object(checks));
    let summary = Value::Object(summary);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunReport {
        summary,
        checks: outcome.checks,
        diverged: outcome.diverged,
        out_dir: dir.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_and_overrides() {
        let mut cfg = ExperimentConfig::new(Experiment::CollapseCase1);
        cfg.apply_text("# comment\na0 = 3.0\n\nc=0.2 # trailing\nseed = 9\n").unwrap();
        assert_eq!(cfg.f64("a0").unwrap(), 3.0);
        assert_eq!(cfg.f64("c").unwrap(), 0.2);
        assert_eq!(cfg.seed, 9);
        assert!(matches!(cfg.set("nonsense", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_text("a0 3"), Err(Error::Config(_))));
        assert!(matches!("bogus".parse::<Experiment>(), Err(Error::Config(_))));
    }

    #[test]
    fn every_experiment_round_trips_its_name() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
            assert!(!e.defaults().is_empty());
        }
    }

    #[test]
    fn integer_parsing() {
        let mut cfg = ExperimentConfig::new(Experiment::CollapseCase2);
        cfg.set("max_steps", "1e6").unwrap();
        assert_eq!(cfg.usize("max_steps").unwrap(), 1_000_000);
        cfg.set("max_steps", "2.5").unwrap();
        assert!(cfg.usize("max_steps").is_err());
    }
}
