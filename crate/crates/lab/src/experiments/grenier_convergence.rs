//! Hydrodynamic formulation: agreement with the direct conformal solve,
//! convergence of the exact system to its `ħ = 0` limit, the velocity form and
//! the symmetrizer.

use anyhow::Result;
use cascade_core::fit::richardson_error;
use cascade_core::grenier::{
    convergence_study, gradient_consistency, integrate_exact, integrate_velocity,
    probe_resolved_lifespan, reconstruct_psi, sample_states, symmetrizer_check, ConvergenceSetup,
    FlowOptions, HydroState, Sampling, VelocityState,
};
use cascade_core::grid::{sample, Formulation, WaveField};
use cascade_core::model::{unit_gaussian, Nonlinearity, PhysParams};
use cascade_core::solver::{evolve, initial_data, EvolutionSpec};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::report::{num, Check, Outcome, Table};

/// Discrepancy must stay below this multiple of the combined Richardson bound.
pub const RICHARDSON_FACTOR: f64 = 2.0;
pub const EXPONENT_TOL: f64 = 0.2;
pub const GRADIENT_CONSISTENCY: f64 = 1e-6;
const STRANG_DT: f64 = 0.02;
const RK4_DT: f64 = 0.01;
const PROBE_DT: f64 = 5e-3;
const PROBE_EVERY: f64 = 0.05;
const SYMMETRIZER_SAMPLES: usize = 64;

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConsistencyRow {
    pub hbar: f64,
    pub discrepancy: f64,
    pub richardson_strang: f64,
    pub richardson_rk4: f64,
}

impl ConsistencyRow {
    pub fn ratio(&self) -> f64 {
        self.discrepancy / (self.richardson_strang + self.richardson_rk4)
    }
}

/// Reconstructed hydrodynamic solution vs the split-step conformal solve at
/// `t_end`, both at three step sizes.
pub fn consistency(
    a0: &WaveField,
    params: &PhysParams,
    nl: &Nonlinearity,
    t_end: f64,
) -> Result<ConsistencyRow> {
    let init = initial_data(
        params,
        &*unit_gaussian(),
        a0.grid,
        Formulation::ConformalPsi,
    )?;
    let mut strang = Vec::new();
    let mut rk4 = Vec::new();
    for level in 0..3 {
        let f = 0.5f64.powi(level);
        let spec = EvolutionSpec::new(
            Formulation::ConformalPsi,
            *params,
            nl.clone(),
            params.t0,
            t_end,
            STRANG_DT * f,
        )
        .without_boundary_check();
        strang.push(evolve(&spec, &init)?.final_state);
        let start = HydroState::from_amplitude(a0, params.t0, params.hbar);
        let run = integrate_exact(&start, nl, t_end, RK4_DT * f, &FlowOptions::default())?;
        rk4.push(reconstruct_psi(&run.final_state)?);
    }
    Ok(ConsistencyRow {
        hbar: params.hbar,
        discrepancy: strang[2].l2_distance(&rk4[2])?,
        richardson_strang: richardson_error(strang[1].l2_distance(&strang[2])?, 2),
        richardson_rk4: richardson_error(rk4[1].l2_distance(&rk4[2])?, 4),
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg.experiment.name(), &cfg.hash());
    let grid = cfg.grid_or(128, 8.0)?;
    let nl = cfg.nonlinearity();
    let hbar_list = if cfg.hbar_list.is_empty() {
        vec![0.2, 0.1, 0.05]
    } else {
        cfg.hbar_list.clone()
    };
    let hbar_min = *hbar_list.last().expect("non-empty");
    let dt = cfg.dt.unwrap_or(5e-3);
    let a0 = sample(grid, &*unit_gaussian())?;

    // Empirical lifespan: gradient breakdown of the limit flow, or loss of
    // resolution of a e^{iφ/ħ} at the smallest ħ, whichever comes first.
    let probe = probe_resolved_lifespan(
        &a0,
        &nl,
        cfg.horizon.unwrap_or(1.0),
        PROBE_DT,
        hbar_min,
        cfg.tail_limit,
        PROBE_EVERY,
    )?;
    let t_used = probe.working_time();
    out.key("T", probe.lifespan);
    out.key("T_used", t_used);

    let rows: Vec<ConsistencyRow> = hbar_list
        .par_iter()
        .map(|&h| {
            let params = PhysParams::from_hbar(h, cfg.k, cfg.n_dim, cfg.sigma)?;
            consistency(&a0, &params, &nl, t_used)
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(
        "consistency",
        &[
            "hbar",
            "discrepancy",
            "richardson_strang",
            "richardson_rk4",
            "ratio",
        ],
    );
    for r in &rows {
        table.push(vec![
            num(r.hbar),
            num(r.discrepancy),
            num(r.richardson_strang),
            num(r.richardson_rk4),
            num(r.ratio()),
        ]);
        out.check(Check::new(
            format!("reconstruction_vs_direct_hbar_{}", r.hbar),
            r.ratio(),
            format!("discrepancy < {RICHARDSON_FACTOR} x Richardson bound"),
            r.ratio() < RICHARDSON_FACTOR,
        ));
    }
    out.tables.push(table);

    let setup = ConvergenceSetup {
        hbar_list: hbar_list.clone(),
        k: cfg.k,
        sigma: cfg.sigma,
        a0: a0.clone(),
        t_end: t_used,
        dt,
        samples: 16,
    };
    let report = convergence_study(&setup, &nl)?;
    let predicted = report.predicted_exponent;
    let mut fits = Table::new(
        "convergence_fits",
        &["s", "exponent", "predicted", "r2", "monotone"],
    );
    for f in &report.fits {
        fits.push(vec![
            f.s.to_string(),
            num(f.exponent),
            num(predicted),
            num(f.r2),
            f.monotone.to_string(),
        ]);
        out.key(&format!("exponent_h{}", f.s), f.exponent);
        if f.s <= 1 {
            out.check(Check::holds(
                format!("errors_decreasing_h{}", f.s),
                f.monotone,
                "strictly decreasing in hbar",
            ));
            out.check(Check::within(
                format!("convergence_exponent_h{}", f.s),
                f.exponent,
                predicted,
                EXPONENT_TOL,
            ));
        }
    }
    let mut errors = Table::new(
        "convergence_errors",
        &["hbar", "s", "sup_error_a", "sup_error_phi", "total"],
    );
    for r in &report.rows {
        errors.push(vec![
            num(r.hbar),
            r.s.to_string(),
            num(r.sup_error_a),
            num(r.sup_error_phi),
            num(r.total()),
        ]);
    }
    out.tables.push(fits);
    out.tables.push(errors);

    // Phase form against velocity form at the largest ħ.
    let params = PhysParams::from_hbar(hbar_list[0], cfg.k, cfg.n_dim, cfg.sigma)?;
    let phase = integrate_exact(
        &HydroState::from_amplitude(&a0, params.t0, params.hbar),
        &nl,
        t_used,
        dt,
        &FlowOptions::default(),
    )?;
    let velocity = integrate_velocity(
        &VelocityState::from_amplitude(&a0, params.t0, params.hbar),
        &nl,
        t_used,
        dt,
        &FlowOptions::default(),
    )?;
    let drift = gradient_consistency(&phase.final_state, &velocity.final_state)?;
    out.check(Check::below(
        "velocity_form_consistency",
        drift,
        GRADIENT_CONSISTENCY,
    ));

    let sampling = if crate::seedless() {
        Sampling::Lattice
    } else {
        Sampling::Random { seed: cfg.seed }
    };
    let states = sample_states(SYMMETRIZER_SAMPLES, cfg.n_dim, 2.0, sampling);
    let sym = symmetrizer_check(&states, t_used, &nl, grid, sampling)?;
    out.key("symmetrizer_max_defect", sym.max_symmetry_defect);
    out.key("symmetrizer_min_eigenvalue", sym.min_eigenvalue);
    out.check(Check::holds(
        "symmetrizer",
        sym.passed(),
        "symmetric, positive, skew",
    ));
    out.details = serde_json::json!({ "probe": probe, "consistency": rows, "convergence": report, "symmetrizer": sym });
    Ok(out.finish())
}
