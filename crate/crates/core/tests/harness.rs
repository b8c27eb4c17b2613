use std::path::Path;

use distlab::harness::{self, emit_plot, Experiment, ExperimentConfig, PlotSpec, EXIT_DIVERGED};
use distlab::{Error, TrajectoryLog};

fn run_in(dir: &Path, experiment: Experiment, seed: u64, overrides: &[(&str, &str)]) -> harness::RunReport {
    let mut cfg = ExperimentConfig::new(experiment);
    cfg.seed = seed;
    cfg.out_dir = dir.to_path_buf();
    for (k, v) in overrides {
        cfg.set(k, v).unwrap();
    }
    harness::run(&cfg, None).unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_in(&a, Experiment::BpRate, 7, &[]);
    run_in(&b, Experiment::BpRate, 7, &[]);
    for file in ["trajectory.csv", "summary.json", "plot.svg"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["params"]["m"], "2048");
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Experiment::MmdSweep);
    cfg.set("replicas", "2").unwrap();
    cfg.set("m", "256").unwrap();
    cfg.out_dir = tmp.path().join("one");
    harness::run(&cfg, Some(1)).unwrap();
    cfg.out_dir = tmp.path().join("three");
    harness::run(&cfg, Some(3)).unwrap();
    let read = |d: &str| TrajectoryLog::from_csv(&std::fs::read_to_string(tmp.path().join(d).join("trajectory.csv")).unwrap()).unwrap();
    let (x, y) = (read("one"), read("three"));
    for i in 0..x.len() {
        for (p, q) in x.row(i).iter().zip(y.row(i)) {
            assert!((p - q).abs() <= 1e-12 * p.abs().max(1e-300));
        }
    }
}

#[test]
fn divergence_keeps_partial_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_in(tmp.path(), Experiment::BpMemorize, 1, &[("dt", "1e307"), ("horizon", "1e308"), ("replicas", "1")]);
    assert!(report.diverged.is_some());
    assert_eq!(report.exit_code(false), EXIT_DIVERGED);
    assert_eq!(report.summary["status"], "diverged");
    assert!(tmp.path().join("trajectory.csv").exists());
}

#[test]
fn collapse_case1_reports_survival() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_in(tmp.path(), Experiment::CollapseCase1, 1, &[("a0", "2.5"), ("c", "0.9")]);
    assert_eq!(report.summary["outcome"], "survived");
    assert!(report.all_passed());
    assert_eq!(report.exit_code(true), 0);
}

#[test]
fn collapse_case1_sweep_file() {
    let tmp = tempfile::tempdir().unwrap();
    run_in(tmp.path(), Experiment::CollapseCase1, 1, &[("sweep", "true")]);
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("a0,c,gamma,outcome,t_collapse"));
    assert_eq!(lines.count(), 220);
    assert!(csv.contains(",collapsed,") && csv.contains(",survived,"));
}

#[test]
fn config_errors_are_usage_errors() {
    let mut cfg = ExperimentConfig::new(Experiment::Landscape);
    let err = cfg.set("a0", "1").unwrap_err();
    assert_eq!(harness::error_exit_code(&err), harness::EXIT_USAGE);
    cfg.set("init", "spiral").unwrap();
    let tmp = tempfile::tempdir().unwrap();
    cfg.out_dir = tmp.path().to_path_buf();
    let err = harness::run(&cfg, None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(harness::error_exit_code(&err), harness::EXIT_USAGE);
}

fn kl_curves() -> TrajectoryLog {
    let mut log = TrajectoryLog::new(&["t", "kl_population", "kl_empirical"]);
    for i in 0..=20 {
        let t = i as f64 * 10.0;
        let pop = 0.5 / (1.0 + t);
        let emp = 0.5 / (1.0 + t) + 1e-4 * t;
        log.push(&[t, pop, emp]);
    }
    log
}

#[test]
fn two_series_plot_matches_golden_file() {
    let spec = PlotSpec::new("Population vs empirical training", "t", &["kl_population", "kl_empirical"]).log_y();
    let svg = emit_plot(&kl_curves(), &spec).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/two_series.svg");
    if std::env::var_os("DISTLAB_BLESS").is_some() {
        std::fs::write(&golden, &svg).unwrap();
    }
    let expected = std::fs::read_to_string(&golden).expect("golden file present");
    assert_eq!(svg, expected);
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert_eq!(svg.matches("<line ").count(), 2);
}

#[test]
fn plot_errors() {
    let empty = TrajectoryLog::new(&["t", "kl"]);
    assert!(matches!(emit_plot(&empty, &PlotSpec::new("", "t", &["kl"])), Err(Error::EmptyLog)));
    assert!(matches!(emit_plot(&kl_curves(), &PlotSpec::new("", "t", &["w2"])), Err(Error::MissingColumn(_))));
}
