//! Where the truncated cascade `v_N` stops tracking the solution while the
//! phase-shifted approximant still does.

use anyhow::{bail, Result};
use cascade_core::cascade::{build_stack, psi_n};
use cascade_core::fit::{first_crossing, line_fit};
use cascade_core::grid::{sample, Formulation, GridSpec, Spectral};
use cascade_core::model::{layer_exponent, unit_gaussian, Nonlinearity, PhysParams};
use cascade_core::series::{compute_coeffs, phase_shifted, LimitFlow};
use cascade_core::solver::{evolve, initial_data, EvolutionSpec};
use rayon::prelude::*;
use serde::Serialize;

use super::params_at;
use crate::config::ExperimentConfig;
use crate::report::{num, Check, Outcome, Table};

/// `v_N` error counted as small below this value.
pub const SMALL_ERROR: f64 = 0.1;
/// `v_N` counts as diverged once its error is this multiple of the phase-shifted approximant error.
pub const DIVERGENCE_RATIO: f64 = 3.0;
/// The small-error requirement applies where `1-t >= ε^(β - SMALL_MARGIN)`.
const SMALL_MARGIN: f64 = 0.05;
/// Scan window in `1-t`: from `ε^(γ·LOW)` to `ε^(β·HIGH)`.
const WINDOW_LOW: f64 = 0.95;
const WINDOW_HIGH: f64 = 0.6;
const FLOW_DT: f64 = 2.5e-3;

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub eps: f64,
    pub one_minus_t: f64,
    pub tau: f64,
    /// `ln(1-t)/ln ε`
    pub layer_exponent: f64,
    pub error_vn: f64,
    pub error_theorem: f64,
    pub tail_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsSummary {
    pub eps: f64,
    /// Largest `v_N` error over samples with `1-t >= ε^(β-margin)`.
    pub max_small_error: f64,
    /// Whether some sample strictly between the first and second layers has
    /// `error_vn >= 3 error_theorem`.
    pub diverges_between_layers: bool,
    /// `1-t` of the first 3x crossing, scanning towards `t = 1`.
    pub crossing_layer: Option<f64>,
    pub crossing_exponent: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstabilityReport {
    pub n_terms: usize,
    pub rows: Vec<ScanRow>,
    pub per_eps: Vec<EpsSummary>,
    /// Least-squares `ω` in `1-t* = ε^ω` over the crossings.
    pub divergence_exponent: f64,
    /// Slope of `ln(1-t*)` against `ln ε` when a prefactor is also fitted.
    pub divergence_slope_with_prefactor: f64,
    pub first_layer: f64,
    pub second_layer: f64,
    /// `(γ + s(α-1))/(1 + s(n-1))` for `s = 1, 2, 3`.
    pub omega_predictions: Vec<f64>,
}

pub fn omega_predictions(params: &PhysParams) -> Vec<f64> {
    [1.0, 2.0, 3.0].iter().map(|&s| params.omega(s)).collect()
}

/// Scan of one ε: conformal solve recorded on the layer grid, compared with
/// `a₀e^{iG_N/ħ}` and `a₀e^{iφ/ħ}`.
pub fn scan_eps(
    params: &PhysParams,
    nl: &Nonlinearity,
    flow: &LimitFlow,
    grid: GridSpec,
    n_terms: usize,
    points: usize,
    dt: f64,
) -> Result<Vec<ScanRow>> {
    let (lo, hi) = (params.gamma * WINDOW_LOW, params.beta * WINDOW_HIGH);
    let ln_eps = params.eps.ln();
    let mut rows = Vec::with_capacity(points);
    // Ascending conformal time = descending 1-t.
    let mut layers: Vec<f64> = (0..points)
        .map(|i| (ln_eps * (hi + (lo - hi) * i as f64 / (points - 1) as f64)).exp())
        .collect();
    layers.dedup();
    let taus: Vec<f64> = layers.iter().map(|w| params.t0 / w).collect();
    if taus[0] <= params.t0 {
        bail!("scan starts before ε^γ");
    }
    let stack = build_stack(&unit_gaussian(), params, n_terms, grid)?;
    let init = initial_data(params, &*unit_gaussian(), grid, Formulation::ConformalPsi)?;
    let spec = EvolutionSpec::new(
        Formulation::ConformalPsi,
        *params,
        nl.clone(),
        params.t0,
        *taus.last().unwrap(),
        dt,
    )
    .recording(taus.clone())
    .without_boundary_check();
    let traj = evolve(&spec, &init)?;
    let phases = flow.phases(&taus)?;
    let spectral = Spectral::new(grid);
    for (((psi, phase), &tau), &w) in traj.snapshots.iter().zip(&phases).zip(&taus).zip(&layers) {
        let theorem = phase_shifted(&flow.coeffs.a0, phase, params.hbar, tau)?;
        let cascade = psi_n(&stack, n_terms, tau, params.hbar);
        rows.push(ScanRow {
            eps: params.eps,
            one_minus_t: w,
            tau,
            layer_exponent: w.ln() / ln_eps,
            error_vn: psi.l2_distance(&cascade)?,
            error_theorem: psi.l2_distance(&theorem)?,
            tail_fraction: spectral.tail_fraction(&psi.values),
        });
    }
    Ok(rows)
}

pub fn summarize(params: &PhysParams, rows: &[ScanRow]) -> EpsSummary {
    let first = params.beta;
    let second = layer_exponent(params, 2);
    let max_small_error = rows
        .iter()
        .filter(|r| r.layer_exponent <= first - SMALL_MARGIN)
        .map(|r| r.error_vn)
        .fold(0.0, f64::max);
    let diverges_between_layers = rows.iter().any(|r| {
        r.layer_exponent > first
            && r.layer_exponent < second
            && r.error_vn >= DIVERGENCE_RATIO * r.error_theorem
    });
    let xs: Vec<f64> = rows.iter().map(|r| r.one_minus_t.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error_vn / r.error_theorem).collect();
    let crossing_layer = first_crossing(&xs, &ys, DIVERGENCE_RATIO).map(f64::exp);
    EpsSummary {
        eps: params.eps,
        max_small_error,
        diverges_between_layers,
        crossing_layer,
        crossing_exponent: crossing_layer.map(|w| w.ln() / params.eps.ln()),
    }
}

pub fn run_scan(cfg: &ExperimentConfig) -> Result<InstabilityReport> {
    let grid = cfg.grid_or(256, 8.0)?;
    let nl = cfg.nonlinearity();
    let eps_list = cfg.eps_or(&[1e-5, 1e-6, 1e-7]);
    let n_terms = cfg.n_terms;
    if n_terms < 2 {
        bail!("the instability scan needs N >= 2 cascade terms");
    }
    let points = cfg.scan_points.unwrap_or(61).max(2);
    let dt = cfg.dt.unwrap_or(1e-3);
    let params0 = params_at(cfg, eps_list[0])?;
    let a0 = sample(grid, &*unit_gaussian())?;
    let reach = eps_list
        .iter()
        .map(|&e| {
            params0
                .with_eps(e)
                .map(|p| p.t0 / p.eps.powf(p.gamma * WINDOW_LOW))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let flow = LimitFlow::new(
        compute_coeffs(&a0, &params0, &nl)?,
        &nl,
        reach,
        FLOW_DT,
        0.05,
    )?;

    let scans: Vec<(EpsSummary, Vec<ScanRow>)> = eps_list
        .par_iter()
        .map(|&e| {
            let p = params0.with_eps(e)?;
            let r = scan_eps(&p, &nl, &flow, grid, n_terms, points, dt)?;
            Ok((summarize(&p, &r), r))
        })
        .collect::<Result<_>>()?;
    let (per_eps, rows): (Vec<_>, Vec<_>) = scans.into_iter().unzip();
    let rows: Vec<ScanRow> = rows.into_iter().flatten().collect();
    let crossings: Vec<(f64, f64)> = per_eps
        .iter()
        .filter_map(|s| s.crossing_layer.map(|w| (s.eps.ln(), w.ln())))
        .collect();
    let (divergence_exponent, divergence_slope_with_prefactor) = if crossings.len() == per_eps.len()
    {
        let sxy: f64 = crossings.iter().map(|(x, y)| x * y).sum();
        let sxx: f64 = crossings.iter().map(|(x, _)| x * x).sum();
        let slope = if crossings.len() >= 2 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = crossings.iter().cloned().unzip();
            line_fit(&xs, &ys)?.slope
        } else {
            f64::NAN
        };
        (sxy / sxx, slope)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(InstabilityReport {
        n_terms,
        rows,
        per_eps,
        divergence_exponent,
        divergence_slope_with_prefactor,
        first_layer: params0.beta,
        second_layer: layer_exponent(&params0, 2),
        omega_predictions: omega_predictions(&params0),
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg.experiment.name(), &cfg.hash());
    let report = run_scan(cfg)?;
    let (first, second) = (report.first_layer, report.second_layer);
    for (s, w) in report.omega_predictions.iter().enumerate() {
        out.check(Check::holds(
            format!("omega_prediction_s{}_bracketed", s + 1),
            *w > first && *w < second,
            "between the layers",
        ));
        out.key(&format!("omega_prediction_s{}", s + 1), *w);
    }
    for s in &report.per_eps {
        out.check(Check::below(
            format!("vn_small_outside_first_layer_eps_{}", s.eps),
            s.max_small_error,
            SMALL_ERROR,
        ));
        out.check(Check::holds(
            format!("vn_diverges_between_layers_eps_{}", s.eps),
            s.diverges_between_layers,
            format!("error_vn >= {DIVERGENCE_RATIO} x error_theorem for some 1-t in (eps^{second:.4}, eps^{first})"),
        ));
        if let Some(x) = s.crossing_exponent {
            out.key(&format!("crossing_exponent_eps_{}", s.eps), x);
        }
    }
    let w = report.divergence_exponent;
    out.key("divergence_exponent", w);
    out.key(
        "divergence_slope_with_prefactor",
        report.divergence_slope_with_prefactor,
    );
    out.check(Check::new(
        "divergence_exponent_bracketed",
        w,
        format!("in ({first}, {second:.4})"),
        w > first && w < second,
    ));
    out.notes.push(
        "divergence exponent: least-squares omega in 1-t* = eps^omega at the first 3x crossing; the slope with a fitted prefactor is reported alongside"
            .into(),
    );
    let mut table = Table::new(
        "scan",
        &[
            "eps",
            "one_minus_t",
            "tau",
            "layer_exponent",
            "error_vn",
            "error_theorem",
            "tail_fraction",
        ],
    );
    for r in &report.rows {
        table.push(vec![
            num(r.eps),
            num(r.one_minus_t),
            num(r.tau),
            num(r.layer_exponent),
            num(r.error_vn),
            num(r.error_theorem),
            num(r.tail_fraction),
        ]);
    }
    out.tables.push(table);
    out.details = serde_json::to_value(&report)?;
    Ok(out.finish())
}
