//! Conservation suite of the conformal split-step solver and unitarity of the
//! frame transforms.

use anyhow::Result;
use cascade_core::conformal::{frame_energy, to_conformal, to_rescaled};
use cascade_core::grid::{Formulation, GridSpec, WaveField, C64};
use cascade_core::model::unit_gaussian;
use cascade_core::solver::{evolve, initial_data, EvolutionSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params_at;
use crate::config::ExperimentConfig;
use crate::report::{num, Check, Outcome, Table};

pub const MASS_DRIFT_PER_1E4: f64 = 1e-10;
pub const ENERGY_DRIFT: f64 = 1e-4;
pub const UNITARITY: f64 = 1e-12;
const RANDOM_FIELDS: usize = 100;
const RECORDS: usize = 50;

/// Test field number `index`: uniform random entries, or a fixed
/// trigonometric pattern when randomness is forbidden.
fn test_field(grid: GridSpec, index: usize, seedless: bool, rng: &mut ChaCha8Rng) -> WaveField {
    let values = (0..grid.len())
        .map(|i| {
            if seedless {
                let p = grid.position(i);
                let a = (index + 1) as f64;
                C64::new(
                    (a * p[0] + 0.3 * p[1]).sin() + 0.1 * a,
                    (p[1] * (1.0 + 0.01 * a)).cos(),
                )
            } else {
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            }
        })
        .collect();
    WaveField {
        grid,
        values,
        time: 0.0,
        formulation: Formulation::PhysicalU,
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg.experiment.name(), &cfg.hash());
    let eps = cfg.eps_or(&[3e-3])[0];
    let params = params_at(cfg, eps)?;
    let nl = cfg.nonlinearity();
    let grid = cfg.grid_or(256, 8.0)?;
    let steps = cfg.steps.unwrap_or(10_000);

    // Conformal run from τ = ε^γ to the image of t = 1 - 2ε^γ.
    let tau_end = params.conformal_time(1.0 - 2.0 * params.t0);
    let init = initial_data(&params, &*unit_gaussian(), grid, Formulation::ConformalPsi)?;
    let span = tau_end - params.t0;
    let times: Vec<f64> = (1..=RECORDS)
        .map(|i| params.t0 + span * i as f64 / RECORDS as f64)
        .collect();
    let spec = EvolutionSpec::new(
        Formulation::ConformalPsi,
        params,
        nl.clone(),
        params.t0,
        tau_end,
        span / steps as f64,
    )
    .recording(times)
    .without_boundary_check();
    let traj = evolve(&spec, &init)?;
    let mass0 = init.mass();
    let energy0 = frame_energy(&init, &params, &nl)?;
    let mut table = Table::new("conservation", &["tau", "t", "mass", "energy", "sup_norm"]);
    let (mut mass_drift, mut energy_drift) = (0.0f64, 0.0f64);
    for d in &traj.diagnostics {
        mass_drift = mass_drift.max((d.mass - mass0).abs() / mass0);
        energy_drift = energy_drift.max((d.energy - energy0).abs() / energy0.abs());
        table.push(vec![
            num(d.t),
            num(params.physical_time(d.t)),
            num(d.mass),
            num(d.energy),
            num(d.sup_norm),
        ]);
    }
    let per_1e4 = mass_drift * 1e4 / traj.steps as f64;
    out.key("split_steps", traj.steps as f64);
    out.key("mass_drift", mass_drift);
    out.key("energy_drift", energy_drift);
    out.key("energy_initial", energy0);
    out.check(Check::below(
        "mass_drift_per_1e4_steps",
        per_1e4,
        MASS_DRIFT_PER_1E4,
    ));
    out.check(Check::below(
        "physical_energy_drift",
        energy_drift,
        ENERGY_DRIFT,
    ));
    out.tables.push(table);
    out.fields.push(("psi_final".into(), traj.final_state));

    // Unitarity of both transforms on test fields.
    let seedless = crate::seedless();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let small = GridSpec::new(cfg.n_dim, 32, 4.0)?;
    let mut worst = 0.0f64;
    let mut utable = Table::new(
        "unitarity",
        &["index", "t", "conformal_rel_error", "rescaled_rel_error"],
    );
    for index in 0..RANDOM_FIELDS {
        let t = if seedless {
            (1.0 - 2.0 * params.t0) * index as f64 / RANDOM_FIELDS as f64
        } else {
            rng.gen_range(0.0..1.0 - 2.0 * params.t0)
        };
        let mut u = test_field(small, index, seedless, &mut rng);
        u.time = t;
        let norm = u.mass().sqrt();
        let rel = |w: &WaveField| (w.mass().sqrt() - norm).abs() / norm;
        let c = rel(&to_conformal(&u, &params, t)?);
        let r = rel(&to_rescaled(&u, &params, t)?);
        worst = worst.max(c).max(r);
        utable.push(vec![index.to_string(), num(t), num(c), num(r)]);
    }
    out.key("unitarity_worst", worst);
    out.check(Check::below("transform_unitarity", worst, UNITARITY));
    out.tables.push(utable);
    Ok(out.finish())
}
