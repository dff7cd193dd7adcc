use std::fs;
use std::path::Path;
use std::process::Command;

use cascade_lab::{run_all, ExperimentConfig, ExperimentKind};

const CLI: &str = env!("CARGO_BIN_EXE_cascade-lab");

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut kinds = Vec::new();
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|x| x == "toml") {
            kinds.push(ExperimentConfig::load(&path).unwrap().experiment);
        }
    }
    kinds.sort();
    assert_eq!(
        kinds,
        vec![
            ExperimentKind::Simulate,
            ExperimentKind::LinearLayer,
            ExperimentKind::CascadeLayers,
            ExperimentKind::MainTheorem,
            ExperimentKind::InstabilityScan,
            ExperimentKind::GrenierConvergence,
            ExperimentKind::SeriesOrders,
        ]
    );
}

#[test]
fn empty_config_dir_gives_an_empty_passing_manifest() {
    let cfg = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let m = run_all(cfg.path(), out.path(), false).unwrap();
    assert!(m.entries.is_empty());
    assert!(m.all_passed());
    assert!(out.path().join("manifest.json").exists());
}

#[test]
fn broken_config_is_recorded_not_fatal() {
    let cfg = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write(
        cfg.path(),
        "a_bad.toml",
        "experiment = \"linear_layer\"\nunknown_field = 3\n",
    );
    write(
        cfg.path(),
        "b_good.toml",
        "experiment = \"linear_layer\"\npoints = 1024\n",
    );
    let m = run_all(cfg.path(), out.path(), false).unwrap();
    assert_eq!(m.entries.len(), 2);
    assert!(!m.entries[0].passed);
    assert!(m.entries[0]
        .error
        .as_deref()
        .unwrap()
        .contains("unknown_field"));
    assert!(m.entries[1].passed, "{:?}", m.entries[1]);
    assert!(!m.all_passed());
    let json = fs::read_to_string(out.path().join("manifest.json")).unwrap();
    assert!(json.contains("b_good.toml"));
    assert!(out
        .path()
        .join("b_good")
        .join("linear_layer_report.json")
        .exists());
}

#[test]
fn artifacts_are_reproducible() {
    let cfg = tempfile::tempdir().unwrap();
    write(
        cfg.path(),
        "cascade.toml",
        "experiment = \"cascade_layers\"\npoints = 64\neps_list = [1e-2, 1e-3, 1e-4]\n",
    );
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(cfg.path(), a.path(), false).unwrap();
    run_all(cfg.path(), b.path(), false).unwrap();
    let mut compared = 0;
    for entry in fs::read_dir(a.path().join("cascade")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(b.path().join("cascade").join(name)).unwrap(),
            "{name:?}"
        );
        compared += 1;
    }
    assert!(compared >= 2);
}

#[test]
fn csv_rows_start_with_the_config_hash() {
    let cfg = ExperimentConfig::from_toml("experiment = \"linear_layer\"\n").unwrap();
    let out = tempfile::tempdir().unwrap();
    let outcome = cascade_lab::run_experiment(&cfg).unwrap();
    for path in outcome.write(out.path(), false).unwrap() {
        if path.extension().is_some_and(|x| x == "csv") {
            let text = fs::read_to_string(&path).unwrap();
            let mut lines = text.lines();
            assert!(lines.next().unwrap().starts_with("config_hash,"));
            assert!(lines.all(|l| l.starts_with(&cfg.hash())));
        }
    }
}

#[test]
fn cli_exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let ok = Command::new(CLI)
        .args(["linear-layer", "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(String::from_utf8_lossy(&ok.stdout).contains("linear_layer"));

    let cfg = tempfile::tempdir().unwrap();
    write(cfg.path(), "wrong.toml", "experiment = \"series_orders\"\n");
    let mismatch = Command::new(CLI)
        .args(["linear-layer", "--config"])
        .arg(cfg.path().join("wrong.toml"))
        .output()
        .unwrap();
    assert_eq!(mismatch.status.code(), Some(2));

    // One ε and one layer admit no slope fit.
    let lone = tempfile::tempdir().unwrap();
    write(
        lone.path(),
        "fails.toml",
        "experiment = \"linear_layer\"\nlayer_list = [0.5]\neps_list = [1e-2]\n",
    );
    let failing = Command::new(CLI)
        .args(["run-all", "--configs"])
        .arg(lone.path())
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_ne!(failing.status.code(), Some(0));
}
