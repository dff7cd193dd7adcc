//! Λ-profile of the distance between the solution and the phase-shifted
//! approximant, evaluated in the conformal frame (the lens transform is
//! unitary, so distances equal the physical ones).

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use cascade_core::grenier::probe_resolved_lifespan;
use cascade_core::grid::{sample, Formulation, GridSpec, Spectral, WaveField};
use cascade_core::model::{unit_gaussian, Nonlinearity, PhysParams};
use cascade_core::series::{compute_coeffs, phase_shifted, LimitFlow};
use cascade_core::solver::{evolve, initial_data, EvolutionSpec};
use rayon::prelude::*;
use serde::Serialize;

use super::params_at;
use crate::config::ExperimentConfig;
use crate::report::{num, Check, Outcome, Table};

/// Terminal profile value must be below this fraction of `‖a₀‖`.
pub const TERMINAL_FRACTION: f64 = 0.1;
/// The no-phase control must stay above this fraction of `‖a₀‖`.
pub const CONTROL_FRACTION: f64 = 0.3;
const FLOW_DT: f64 = 2.5e-3;
const PROBE_DT: f64 = 5e-3;

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub eps: f64,
    pub lambda: f64,
    pub tau: f64,
    pub error: f64,
    pub tail_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsResult {
    pub eps: f64,
    pub cells: Vec<CellResult>,
    /// `‖ψ - a₀‖` at `1-t = ε^β`, i.e. against the unshifted linear profile.
    pub control_error: f64,
}

/// Solve the conformal equation at `eps` and measure the approximant error at
/// `τ = 1/Λ` for every `Λ`, plus the control at the first layer.
pub fn run_eps(
    params: &PhysParams,
    nl: &Nonlinearity,
    flow: &LimitFlow,
    grid: GridSpec,
    lambdas: &[f64],
    dt: f64,
) -> Result<EpsResult> {
    let tau_control = params.conformal_time(1.0 - params.t0.powf(params.beta / params.gamma));
    let mut taus: Vec<f64> = lambdas
        .iter()
        .map(|l| 1.0 / l)
        .chain(std::iter::once(tau_control))
        .collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    if taus[0] <= params.t0 {
        bail!(
            "1/Λ = {} does not exceed the start time ε^γ = {} at ε = {}",
            taus[0],
            params.t0,
            params.eps
        );
    }
    let init = initial_data(params, &*unit_gaussian(), grid, Formulation::ConformalPsi)?;
    let tau_end = *taus.last().expect("non-empty");
    let spec = EvolutionSpec::new(
        Formulation::ConformalPsi,
        *params,
        nl.clone(),
        params.t0,
        tau_end,
        dt,
    )
    .recording(taus.clone())
    .without_boundary_check();
    let traj = evolve(&spec, &init)?;
    let phases = flow.phases(&taus)?;
    let spectral = Spectral::new(grid);
    let a0 = &flow.coeffs.a0;
    let mut by_tau = BTreeMap::new();
    for ((psi, &tau), phase) in traj.snapshots.iter().zip(&taus).zip(&phases) {
        let approx = phase_shifted(a0, phase, params.hbar, tau)?;
        by_tau.insert(
            tau.to_bits(),
            (
                psi.l2_distance(&approx)?,
                spectral.tail_fraction(&psi.values),
            ),
        );
    }
    let cells = lambdas
        .iter()
        .map(|&lambda| {
            let tau = 1.0 / lambda;
            let (error, tail_fraction) = by_tau[&tau.to_bits()];
            CellResult {
                eps: params.eps,
                lambda,
                tau,
                error,
                tail_fraction,
            }
        })
        .collect();
    let control_snapshot = &traj.snapshots[taus
        .iter()
        .position(|&t| t == tau_control)
        .expect("recorded")];
    let unshifted = WaveField {
        time: tau_control,
        ..a0.clone()
    };
    Ok(EpsResult {
        eps: params.eps,
        cells,
        control_error: control_snapshot.l2_distance(&unshifted)?,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg.experiment.name(), &cfg.hash());
    let grid = cfg.grid_or(256, 8.0)?;
    let nl = cfg.nonlinearity();
    let eps_list = cfg.eps_or(&[1e-2, 3e-3]);
    let lambdas = if cfg.lambda_list.is_empty() {
        vec![2.0, 4.0, 8.0, 16.0]
    } else {
        cfg.lambda_list.clone()
    };
    let dt = cfg.dt.unwrap_or(1e-3);
    let params0 = params_at(cfg, eps_list[0])?;
    let a0 = sample(grid, &*unit_gaussian())?;
    let norm_a0 = a0.mass().sqrt();

    let all_eps: Vec<f64> = eps_list
        .iter()
        .chain(&cfg.supplementary_eps_list)
        .cloned()
        .collect();
    let hbar_min = eps_list
        .iter()
        .map(|&e| params0.with_eps(e).map(|p| p.hbar))
        .collect::<Result<Vec<_>, _>>()?;
    let hbar_min = hbar_min.into_iter().fold(f64::INFINITY, f64::min);
    let probe = probe_resolved_lifespan(
        &a0,
        &nl,
        cfg.horizon.unwrap_or(1.0),
        PROBE_DT,
        hbar_min,
        cfg.tail_limit,
        0.05,
    )?;
    let t_used = probe.working_time();
    out.key("T_used", t_used);
    if lambdas.iter().any(|&l| 1.0 / l > t_used) {
        bail!("every Λ must satisfy 1/Λ <= T_used = {t_used}");
    }

    let coeffs = compute_coeffs(&a0, &params0, &nl)?;
    let reach = all_eps
        .iter()
        .map(|&e| {
            params0
                .with_eps(e)
                .map(|p| p.conformal_time(1.0 - p.t0.powf(p.beta / p.gamma)))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .chain(lambdas.iter().map(|l| 1.0 / l))
        .fold(0.0, f64::max);
    let flow = LimitFlow::new(coeffs, &nl, reach, FLOW_DT, 0.05)?;

    let results: Vec<EpsResult> = all_eps
        .par_iter()
        .map(|&e| run_eps(&params0.with_eps(e)?, &nl, &flow, grid, &lambdas, dt))
        .collect::<Result<_>>()?;
    let (main, extra) = results.split_at(eps_list.len());

    let mut table = Table::new(
        "errors",
        &[
            "set",
            "eps",
            "lambda",
            "tau",
            "t",
            "l2_error",
            "tail_fraction",
        ],
    );
    for (set, list) in [("main", main), ("supplementary", extra)] {
        for r in list {
            let p = params0.with_eps(r.eps)?;
            for c in &r.cells {
                table.push(vec![
                    set.into(),
                    num(c.eps),
                    num(c.lambda),
                    num(c.tau),
                    num(p.physical_time(c.tau)),
                    num(c.error),
                    num(c.tail_fraction),
                ]);
            }
        }
    }
    let profile_of = |list: &[EpsResult]| -> Vec<f64> {
        (0..lambdas.len())
            .map(|i| list.iter().map(|r| r.cells[i].error).fold(0.0, f64::max))
            .collect()
    };
    let profile = profile_of(main);
    let mut ptable = Table::new("profile", &["lambda", "sup_over_eps"]);
    for (l, v) in lambdas.iter().zip(&profile) {
        ptable.push(vec![num(*l), num(*v)]);
        out.key(&format!("profile_lambda_{l}"), *v);
    }
    let decreasing = profile.windows(2).all(|w| w[1] < w[0]);
    out.check(Check::holds(
        "profile_decreasing",
        decreasing,
        "strictly decreasing in Λ",
    ));
    let terminal = *profile.last().expect("non-empty");
    out.check(Check::below(
        "terminal_over_norm",
        terminal / norm_a0,
        TERMINAL_FRACTION,
    ));
    for r in main {
        out.check(Check::above(
            format!("control_over_norm_eps_{}", r.eps),
            r.control_error / norm_a0,
            CONTROL_FRACTION,
        ));
    }
    if !extra.is_empty() {
        let sup = profile_of(extra);
        let ok = sup.windows(2).all(|w| w[1] < w[0]);
        out.notes.push(format!(
            "supplementary eps {:?}: profile {:?} ({}decreasing); not part of PASS/FAIL",
            cfg.supplementary_eps_list,
            sup.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            if ok { "" } else { "not " }
        ));
        for (l, v) in lambdas.iter().zip(&sup) {
            out.key(&format!("supplementary_profile_lambda_{l}"), *v);
        }
    }
    out.tables.push(table);
    out.tables.push(ptable);
    out.details = serde_json::json!({ "norm_a0": norm_a0, "results": results, "probe": probe });
    Ok(out.finish())
}
