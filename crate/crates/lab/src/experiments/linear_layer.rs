//! Layer law of the linear approximation and the sharp amplitude bound.

use anyhow::{bail, Result};
use cascade_core::grid::sample;
use cascade_core::linear::{amplitude_bound_ratio, linear_layer_error};
use cascade_core::model::unit_gaussian;

use crate::config::ExperimentConfig;
use crate::report::{num, Check, Outcome, Table};

pub const SLOPE_TOL: f64 = 0.15;
pub const BOUND_EXCESS: f64 = 1.05;
/// Smallest `|1-t|/ε` sampled for the amplitude bound; keeps the lens-frame
/// spreading inside the box.
const MIN_RELATIVE_LAYER: f64 = 0.25;
const VALIDATION_POINTS: usize = 40;

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(cfg.experiment.name(), &cfg.hash());
    let grid = cfg.grid_or(1024, 32.0)?;
    let eps_list = cfg.eps_or(&[1e-2, 1e-3, 1e-4]);
    let layers = if cfg.layer_list.is_empty() {
        vec![0.2, 0.1, 0.05, 0.02]
    } else {
        cfg.layer_list.clone()
    };
    if eps_list.len() < 2 || layers.len() < 2 {
        bail!("slope fits need at least two eps values and two layers");
    }
    let t_list: Vec<f64> = layers.iter().map(|w| 1.0 - w).collect();
    let a0 = unit_gaussian();

    let table = linear_layer_error(&eps_list, &t_list, &a0, grid)?;
    let mut errors = Table::new("errors", &["eps", "t", "l2_error"]);
    for r in &table.rows {
        errors.push(vec![num(r.eps), num(r.t), num(r.l2_error)]);
    }
    let mut slopes = Table::new("slopes", &["kind", "fixed_value", "slope", "r2"]);
    for (w, fit) in &table.slopes_eps {
        slopes.push(vec!["eps".into(), num(*w), num(fit.slope), num(fit.r2)]);
        out.check(Check::within(
            format!("slope_in_eps_at_layer_{w}"),
            fit.slope,
            1.0,
            SLOPE_TOL,
        ));
    }
    for (e, fit) in &table.slopes_layer {
        slopes.push(vec!["layer".into(), num(*e), num(fit.slope), num(fit.r2)]);
        out.check(Check::within(
            format!("slope_in_layer_at_eps_{e}"),
            fit.slope,
            -1.0,
            SLOPE_TOL,
        ));
    }
    let (mean_eps, mean_layer, r2) = table.summary();
    out.key("mean_slope_eps", mean_eps);
    out.key("mean_slope_layer", mean_layer);
    out.key("min_r2", r2);
    out.tables.push(errors);
    out.tables.push(slopes);

    // Sharp bound: C is the largest ratio on a calibration set at the
    // largest ε; every validation sample (all ε, dense t) must stay within 5%.
    let a0_field = sample(grid, &*a0)?;
    let mut bound = Table::new("amplitude_bound", &["role", "eps", "t", "ratio"]);
    let eps_cal = eps_list[0];
    let mut cal_t: Vec<f64> = [0.0, 0.25, 0.5, 0.75].to_vec();
    cal_t.extend(
        [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|u| 1.0 - u * eps_cal),
    );
    let mut constant = 0.0f64;
    for &t in &cal_t {
        let r = amplitude_bound_ratio(&a0_field, eps_cal, t)?;
        constant = constant.max(r);
        bound.push(vec!["calibration".into(), num(eps_cal), num(t), num(r)]);
    }
    let mut worst = 0.0f64;
    for &eps in &eps_list {
        let (lo, hi) = (MIN_RELATIVE_LAYER.ln(), (1.0 / eps).ln());
        for i in 0..=VALIDATION_POINTS {
            let u = (lo + (hi - lo) * i as f64 / VALIDATION_POINTS as f64).exp();
            let t = (1.0 - u * eps).max(0.0);
            let r = amplitude_bound_ratio(&a0_field, eps, t)?;
            worst = worst.max(r / constant);
            bound.push(vec!["validation".into(), num(eps), num(t), num(r)]);
        }
    }
    out.key("bound_constant", constant);
    out.key("bound_worst_excess", worst);
    out.check(Check::new(
        "sharp_bound_excess",
        worst,
        format!("<= {BOUND_EXCESS}"),
        worst <= BOUND_EXCESS,
    ));
    out.tables.push(bound);
    Ok(out.finish())
}
