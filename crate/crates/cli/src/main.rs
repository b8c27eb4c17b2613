//! `distlab <experiment> [--config FILE] [--seed N] [--out DIR] [--check] [--threads K] [--key value ...]`

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use distlab::harness::{self, Experiment, ExperimentConfig, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "distlab", about = "Run a distlab experiment and write its artifacts")]
struct Cli {
    /// Experiment name, e.g. bp_rate or collapse_case1.
    experiment: String,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit nonzero if any experiment check fails.
    #[arg(long)]
    check: bool,
    /// Size of the worker pool for internal parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

/// Flags that clap handles, and whether they take a value.
const KNOWN: [(&str, bool); 7] = [
    ("--config", true),
    ("--seed", true),
    ("--out", true),
    ("--threads", true),
    ("--check", false),
    ("--help", false),
    ("-h", false),
];

/// Split argv into the arguments clap understands and the `--key value`
/// parameter overrides.
fn split_args(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut known = Vec::new();
    let mut rest = Vec::new();
    let mut it = args.into_iter();
    if let Some(bin) = it.next() {
        known.push(bin);
    }
    while let Some(a) = it.next() {
        let name = a.split('=').next().unwrap_or("");
        match KNOWN.iter().find(|(k, _)| *k == name) {
            Some((_, takes_value)) => {
                let inline = a.contains('=');
                known.push(a);
                if *takes_value && !inline {
                    if let Some(v) = it.next() {
                        known.push(v);
                    }
                }
            }
            None if a.starts_with('-') => {
                rest.push(a.clone());
                if !a.contains('=') {
                    if let Some(v) = it.next() {
                        rest.push(v);
                    }
                }
            }
            None => known.push(a),
        }
    }
    (known, rest)
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| format!("expected `--key value`, got `{flag}`"))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let value = it.next().ok_or_else(|| format!("missing value for `--{key}`"))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

fn resolve(cli: &Cli, overrides: &[String]) -> Result<ExperimentConfig, String> {
    let experiment: Experiment = cli.experiment.parse().map_err(|e| format!("{e}"))?;
    let mut cfg = ExperimentConfig::new(experiment);
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.apply_text(&text).map_err(|e| e.to_string())?;
    }
    for (k, v) in parse_overrides(overrides)? {
        cfg.set(&k, &v).map_err(|e| e.to_string())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let (known, overrides) = split_args(std::env::args().collect());
    let cli = match Cli::try_parse_from(known) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let cfg = match resolve(&cli, &overrides) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match harness::run(&cfg, cli.threads) {
        Ok(report) => {
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(outcome) = report.summary.get("outcome").and_then(|v| v.as_str()) {
                println!("outcome: {outcome}");
            }
            if let Some(msg) = &report.diverged {
                eprintln!("diverged: {msg}");
            }
            println!("artifacts: {}", report.out_dir.display());
            ExitCode::from(report.exit_code(cli.check) as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::error_exit_code(&e) as u8)
        }
    }
}
