use std::fs;
use std::path::PathBuf;

use dp_audit::harness::{
    emit_report, exit_code, parse_records, plot_points, run_experiment, run_sweep, Cell, DatasetConfig,
    ExperimentConfig, HarnessError, OutputFormat, PLOT_FILE, RECORDS_FILE, TABLE_FILE, TABLE_MARKDOWN_FILE,
};
use dp_audit::nn::Activation;

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Small two-class job that trains in well under a second.
fn tiny(name: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(name, DatasetConfig::synthetic(vec![150, 100], 8, 8));
    cfg.model.width = Some(2);
    cfg.model.depth = Some(1);
    cfg.training.epochs = 2;
    cfg.training.batch_size = 25;
    cfg.training.learning_rate = 1e-2;
    cfg.privacy.delta = 1e-3;
    cfg.attack.repeats = 5;
    cfg
}

#[test]
fn bundled_configs_parse_and_round_trip() {
    let mut seen = 0;
    for entry in fs::read_dir(config_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
            seen += 1;
        }
    }
    assert!(seen >= 4);
}

#[test]
fn config_defaults_fill_in() {
    let cfg = ExperimentConfig::from_toml(
        "name = \"x\"\n[dataset]\nformat = \"synthetic\"\ncounts = [5, 5]\nheight = 4\nwidth = 4\n",
    )
    .unwrap();
    assert_eq!(cfg.seed, 42);
    assert!(cfg.privacy.epsilon.is_infinite());
    assert_eq!(cfg.privacy.delta, 1e-5);
    assert_eq!(cfg.training.epochs, 20);
    assert_eq!(cfg.training.batch_size, 64);
    assert_eq!(cfg.attack.repeats, 100);
    assert_eq!(cfg.model.activation, Activation::Relu);
    assert_eq!(cfg.dataset.split, [0.8, 0.05, 0.15]);
    assert!(ExperimentConfig::from_toml("name = 3").is_err());
}

#[test]
fn identical_runs_write_identical_records() {
    let cfg = tiny("twice").with_epsilon(2.0);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let r = run_experiment(&cfg).unwrap();
        assert!(r.achieved_epsilon <= 2.0 && r.achieved_epsilon >= 0.99 * 2.0, "{}", r.achieved_epsilon);
        assert!(r.wall_clock.is_none());
        emit_report(&[Cell::Done(Box::new(r))], d.path(), &OutputFormat::ALL).unwrap();
    }
    for f in [RECORDS_FILE, TABLE_FILE, TABLE_MARKDOWN_FILE, PLOT_FILE] {
        assert_eq!(fs::read(dirs[0].path().join(f)).unwrap(), fs::read(dirs[1].path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_budget_fails_calibration() {
    let err = run_experiment(&tiny("zero").with_epsilon(0.0)).unwrap_err();
    assert!(matches!(err, HarnessError::Calibration(_)), "{err}");
    assert_eq!(err.exit_code(), exit_code::CALIBRATION);
}

#[test]
fn bad_configs_map_to_config_exit_code() {
    let mut cfg = tiny("bad");
    cfg.training.batch_size = 0;
    assert_eq!(run_experiment(&cfg).unwrap_err().exit_code(), exit_code::CONFIG);
    let mut cfg = tiny("bad");
    cfg.privacy.delta = 1.5;
    assert_eq!(run_experiment(&cfg).unwrap_err().exit_code(), exit_code::CONFIG);
    let missing =
        ExperimentConfig::from_toml("name = \"m\"\n[dataset]\nformat = \"raw\"\npath = \"/nonexistent/file.raw\"\n")
            .unwrap();
    assert_eq!(run_experiment(&missing).unwrap_err().exit_code(), exit_code::DATA);
}

#[test]
fn sweep_fills_every_cell_and_survives_reparsing() {
    let variants = [tiny("a"), tiny("b")];
    let eps = [f64::INFINITY, 10.0, 1.0, 0.0];
    let cells = run_sweep(&variants, &eps, false);
    assert_eq!(cells.len(), 8);
    let coords: Vec<(&str, f64)> = cells.iter().map(|c| (c.variant(), c.epsilon())).collect();
    let expect: Vec<(&str, f64)> = ["a", "b"].iter().flat_map(|&v| eps.iter().map(move |&e| (v, e))).collect();
    assert_eq!(coords, expect);
    for c in &cells {
        match c {
            Cell::Done(r) => assert!(r.achieved_epsilon <= r.target_epsilon),
            Cell::Failed { epsilon, exit_code: code, .. } => {
                assert_eq!(*epsilon, 0.0);
                assert_eq!(*code, exit_code::CALIBRATION);
            }
        }
    }
    assert_eq!(cells.iter().filter(|c| c.report().is_none()).count(), 2);

    let dir = tempfile::tempdir().unwrap();
    emit_report(&cells, dir.path(), &OutputFormat::ALL).unwrap();
    let back = parse_records(dir.path().join(RECORDS_FILE)).unwrap();
    assert_eq!(back, cells);
    let table = fs::read_to_string(dir.path().join(TABLE_FILE)).unwrap();
    assert_eq!(table.lines().count(), 9);
    assert!(table.contains("a,0,NA,NA,NA,NA,NA"));
    let md = fs::read_to_string(dir.path().join(TABLE_MARKDOWN_FILE)).unwrap();
    assert!(md.contains("ε = inf") && md.contains("--"));
}

#[test]
fn weak_models_are_left_out_of_the_plot() {
    let mut r = run_experiment(&tiny("plot")).unwrap();
    assert!(r.attack.is_some());
    r.utility.f1 = 0.9;
    let mut weak = r.clone();
    weak.config.name = "weak".into();
    weak.utility.f1 = 0.3;
    let cells = [Cell::Done(Box::new(r)), Cell::Done(Box::new(weak))];
    let pts = plot_points(&cells);
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0].series, "plot");
    let dir = tempfile::tempdir().unwrap();
    emit_report(&cells, dir.path(), &[OutputFormat::Plot]).unwrap();
    let plot = fs::read_to_string(dir.path().join(PLOT_FILE)).unwrap();
    assert!(!plot.contains("weak"));
    assert!(plot.lines().any(|l| l.starts_with("dp-bound,")));
}

#[test]
fn models_without_positives_are_not_attacked() {
    // Binary F1 of a class that does not exist is zero for every model.
    let mut cfg = tiny("nopos");
    cfg.dataset.averaging = dp_audit::metrics::Averaging::Binary { positive: 5 };
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.utility.f1, 0.0);
    assert!(r.attack.is_none());
    let dir = tempfile::tempdir().unwrap();
    emit_report(&[Cell::Done(Box::new(r))], dir.path(), &[OutputFormat::Table]).unwrap();
    let row = fs::read_to_string(dir.path().join(TABLE_FILE)).unwrap().lines().nth(1).unwrap().to_string();
    assert!(row.contains(",NA,NA,"), "{row}");
}

#[test]
fn malformed_records_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join(RECORDS_FILE);
    fs::write(&p, "{\"status\":\"done\"}\n").unwrap();
    assert!(matches!(parse_records(&p), Err(HarnessError::Parse { .. })));
}
