//! Small-time coefficients of the limit flow: remainder orders, the first
//! coefficient as a limit, the cascade comparison in the conformal frame, and
//! the size of the phase shift in the approximant.

use anyhow::{bail, Result};
use cascade_core::cascade::build_stack;
use cascade_core::grenier::{integrate_limit, probe_lifespan, FlowOptions};
use cascade_core::grid::{sample, Spectral, C64};
use cascade_core::model::unit_gaussian;
use cascade_core::series::{
    compute_coeffs, first_layer_gap, second_order_gap, series_remainder_order, LimitFlow,
    PhaseProfile,
};

use super::params_at;
use crate::config::ExperimentConfig;
use crate::report::{num, Check, Outcome, Table};

pub const FIRST_TOL: f64 = 0.25;
pub const SECOND_TOL: f64 = 0.4;
pub const AMPLITUDE_TOL: f64 = 0.3;
pub const PHI2_REL: f64 = 0.05;
pub const PHI1_LIMIT_H1: f64 = 1e-3;
pub const IDENTITY_GAP: f64 = 1e-8;
pub const SECOND_GAP: f64 = 1e-3;
pub const HALVING_TOL: f64 = 0.2;
pub const ONSET_TOL: f64 = 0.05;
const PHI1_LIMIT_TIME: f64 = 1e-3;
/// Conformal time at which the cascade and the series are compared (`1-t = 2ε^γ`).
const COMPARISON_TAU: f64 = 0.5;

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg.experiment.name(), &cfg.hash());
    let grid = cfg.grid_or(256, 8.0)?;
    let nl = cfg.nonlinearity();
    let eps_list = cfg.eps_or(&[3e-3]);
    let params = params_at(cfg, eps_list[0])?;
    let dt = cfg.dt.unwrap_or(1e-3);
    let samples = if cfg.t_samples.is_empty() {
        vec![0.02, 0.04, 0.08, 0.16]
    } else {
        cfg.t_samples.clone()
    };
    let a0 = sample(grid, &*unit_gaussian())?;

    let probe = probe_lifespan(&a0, &nl, cfg.horizon.unwrap_or(1.0), 5e-3)?;
    let t_used = probe.working_time();
    out.key("T_used", t_used);
    let t_max = samples.iter().cloned().fold(0.0, f64::max);
    if t_max > t_used / 4.0 {
        bail!("time samples must lie in (0, T/4] with T = {t_used}");
    }

    let coeffs = compute_coeffs(&a0, &params, &nl)?;
    let orders = series_remainder_order(&coeffs, &nl, &samples, dt)?;
    let mut fits = Table::new(
        "remainder_fits",
        &["remainder", "sobolev", "slope", "expected", "r2"],
    );
    for (label, list, expected, tol) in [
        (
            "phase_first",
            &orders.first,
            orders.expected_first,
            FIRST_TOL,
        ),
        (
            "phase_second",
            &orders.second,
            orders.expected_second,
            SECOND_TOL,
        ),
        (
            "amplitude",
            &orders.amplitude,
            orders.expected_amplitude,
            AMPLITUDE_TOL,
        ),
    ] {
        for f in list {
            fits.push(vec![
                label.into(),
                f.sobolev.to_string(),
                num(f.fit.slope),
                num(expected),
                num(f.fit.r2),
            ]);
            out.check(Check::within(
                format!("{label}_slope_h{}", f.sobolev),
                f.fit.slope,
                expected,
                tol,
            ));
        }
    }
    out.key("phi2_origin_formula", orders.phi2_origin_formula);
    out.key("phi2_origin_fitted", orders.phi2_origin_fitted);
    out.check(Check::below(
        "phi2_origin_relative_mismatch",
        orders.phi2_relative_mismatch(),
        PHI2_REL,
    ));
    out.tables.push(fits);

    // φ₁ as the limit of φ(t)/t^{n-1}.
    let early = integrate_limit(
        &a0,
        &nl,
        PHI1_LIMIT_TIME,
        PHI1_LIMIT_TIME / 10.0,
        &FlowOptions::default(),
    )?;
    let lead = PHI1_LIMIT_TIME.powf(params.n_dim as f64 - 1.0);
    let diff: Vec<C64> = early
        .final_state
        .phi
        .values
        .iter()
        .zip(&coeffs.phi1.values)
        .map(|(p, q)| C64::new(p / lead - q, 0.0))
        .collect();
    let h1 = Spectral::new(grid).sobolev_sq(&diff, 1.0).sqrt();
    out.check(Check::below("phi1_limit_h1", h1, PHI1_LIMIT_H1));

    // Cascade terms carried to the conformal frame.
    let stack = build_stack(&unit_gaussian(), &params, cfg.n_terms.max(2), grid)?;
    let t_cmp = params.physical_time(COMPARISON_TAU);
    out.check(Check::below(
        "first_layer_identity",
        first_layer_gap(&stack, &coeffs, t_cmp)?,
        IDENTITY_GAP,
    ));
    out.check(Check::above(
        "second_order_discrepancy",
        second_order_gap(&stack, &coeffs, t_cmp)?,
        SECOND_GAP,
    ));

    // Phase shift of the approximant.
    let flow = LimitFlow::new(coeffs.clone(), &nl, t_used.min(0.8), 2.5e-3, 0.05)?;
    let shift = |lambda: f64| flow.phase_shift_sup(&params, 1.0 - lambda * params.t0);
    let halving = shift(16.0)? / shift(8.0)?;
    out.key("phase_shift_ratio_16_over_8", halving);
    out.check(Check::within(
        "phase_shift_halving",
        halving,
        0.5,
        HALVING_TOL * 0.5,
    ));
    let onset_eps = [1e-3, 1e-4, 1e-5, 1e-6];
    let profile = PhaseProfile::new(&flow, 1e-3, flow.reach(), 161)?;
    let onset = profile.onset_exponent(&params, &onset_eps)?;
    let first_layer = params.beta;
    out.key("theorem_onset_exponent", onset.slope);
    out.check(Check::within(
        "theorem_onset_exponent",
        onset.slope,
        first_layer,
        ONSET_TOL,
    ));
    let mut onsets = Table::new("theorem_onsets", &["eps", "layer"]);
    for &e in &onset_eps {
        onsets.push(vec![
            num(e),
            num(profile.onset_layer(&params.with_eps(e)?)?),
        ]);
    }
    out.tables.push(onsets);
    out.details = serde_json::to_value(&orders)?;

    out.fields.push(("phi1".into(), real_as_wave(&coeffs.phi1)));
    out.fields.push(("a1".into(), coeffs.a1.clone()));
    out.fields.push(("phi2".into(), real_as_wave(&coeffs.phi2)));
    Ok(out.finish())
}

fn real_as_wave(field: &cascade_core::grid::RealField) -> cascade_core::grid::WaveField {
    cascade_core::grid::WaveField {
        grid: field.grid,
        values: field.values.iter().map(|&v| C64::new(v, 0.0)).collect(),
        time: 0.0,
        formulation: cascade_core::grid::Formulation::Auxiliary,
    }
}
