//! Experiment harness over `cascade-core`: TOML configs, per-experiment
//! runners with pinned pass rules, CSV/JSON artifacts and a run manifest.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod report;

use std::path::Path;

use anyhow::{Context, Result};

pub use config::{ExperimentConfig, ExperimentKind};
pub use report::{Check, Manifest, ManifestEntry, Outcome};

/// `CASCADE_SEEDLESS=1` forbids randomized sampling.
pub fn seedless() -> bool {
    std::env::var("CASCADE_SEEDLESS")
        .map(|v| v == "1")
        .unwrap_or(false)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    use experiments::*;
    let outcome = match cfg.experiment {
        ExperimentKind::Simulate => simulate::run(cfg),
        ExperimentKind::LinearLayer => linear_layer::run(cfg),
        ExperimentKind::CascadeLayers => cascade_layers::run(cfg),
        ExperimentKind::MainTheorem => main_theorem::run(cfg),
        ExperimentKind::InstabilityScan => instability::run(cfg),
        ExperimentKind::GrenierConvergence => grenier_convergence::run(cfg),
        ExperimentKind::SeriesOrders => series_orders::run(cfg),
    };
    outcome.with_context(|| format!("experiment {}", cfg.experiment.name()))
}

/// Run every `*.toml` in `config_dir` (sorted by file name) and write the
/// artifacts plus `manifest.json` under `out_dir`.
pub fn run_all(config_dir: &Path, out_dir: &Path, dump_fields: bool) -> Result<Manifest> {
    let mut paths: Vec<_> = std::fs::read_dir(config_dir)
        .with_context(|| format!("listing {}", config_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let mut manifest = Manifest::default();
    for path in paths {
        let label = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let entry = match ExperimentConfig::load(&path).and_then(|cfg| {
            let outcome = run_experiment(&cfg)?;
            let artifacts = outcome.write(&out_dir.join(&stem), dump_fields)?;
            Ok((cfg, outcome, artifacts))
        }) {
            Ok((cfg, outcome, artifacts)) => ManifestEntry {
                config: label,
                experiment: Some(cfg.experiment.name().into()),
                passed: outcome.passed,
                key_numbers: outcome.key_numbers,
                artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
                error: None,
            },
            Err(e) => ManifestEntry {
                config: label,
                experiment: None,
                passed: false,
                key_numbers: Default::default(),
                artifacts: Vec::new(),
                error: Some(format!("{e:#}")),
            },
        };
        manifest.entries.push(entry);
    }
    std::fs::create_dir_all(out_dir)?;
    report::write_atomic(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}
