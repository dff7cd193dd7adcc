//! The linear problem: exact free propagation on the grid, the WKB profile
//! focusing at `t = 1`, and the boundary-layer error between them.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{CascadeError, Result};
use crate::fit::{power_fit, LineFit};
use crate::grid::{sample, Formulation, GridSpec, Spectral, WaveField};
use crate::model::Amplitude;

/// Apply the exact multiplier `exp(-i ε t |k|²/2)` of `iε∂_t u + ε²/2 Δu = 0`.
pub fn free_propagate(init: &WaveField, eps: f64, t: f64) -> WaveField {
    let spectral = Spectral::new(init.grid);
    let c = -0.5 * eps * t;
    let k_sq = spectral.k_sq();
    let values = spectral.apply(&init.values, |i| C64::from_polar(1.0, c * k_sq[i]));
    WaveField {
        grid: init.grid,
        values,
        time: init.time + t,
        formulation: init.formulation,
    }
}

/// Geometric-optics solution `(1-t)^{-n/2} a₀(x/(1-t)) e^{i|x|²/(2ε(t-1))}`.
#[derive(Clone)]
pub struct LinearWkbProfile {
    pub eps: f64,
    pub a0: Amplitude,
}

impl std::fmt::Debug for LinearWkbProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearWkbProfile")
            .field("eps", &self.eps)
            .finish()
    }
}

impl LinearWkbProfile {
    pub fn new(eps: f64, a0: Amplitude) -> Self {
        Self { eps, a0 }
    }
}

pub fn wkb_linear(profile: &LinearWkbProfile, grid: GridSpec, t: f64) -> Result<WaveField> {
    if !(t < 1.0) {
        return Err(CascadeError::OutOfRange(format!(
            "WKB profile needs t < 1, got {t}"
        )));
    }
    let shrink = 1.0 - t;
    let amp = shrink.powf(-(grid.dim() as f64) / 2.0);
    let chirp = 1.0 / (2.0 * profile.eps * (t - 1.0));
    let a0 = Arc::clone(&profile.a0);
    let mut field = sample(grid, move |x| {
        let xi: Vec<f64> = x.iter().map(|v| v / shrink).collect();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        a0(&xi) * amp * C64::from_polar(1.0, r2 * chirp)
    })?;
    field.time = t;
    field.formulation = Formulation::PhysicalU;
    Ok(field)
}

/// `‖u_lin(t) - v_lin(t)‖` evaluated after the lens transform, where the
/// WKB profile becomes `a₀` itself and the exact solution is `a₀` propagated
/// for the effective time `ε t/(1-t)` with unit semiclassical constant.
/// `a0_field` is `a₀` sampled on the lens-frame grid.
pub fn linear_layer_error_lens(a0_field: &WaveField, eps: f64, t: f64) -> Result<f64> {
    if !(t < 1.0) {
        return Err(CascadeError::OutOfRange(format!(
            "layer error needs t < 1, got {t}"
        )));
    }
    let moved = free_propagate(a0_field, 1.0, eps * t / (1.0 - t));
    moved.l2_distance(&WaveField {
        time: moved.time,
        ..a0_field.clone()
    })
}

/// Same quantity computed directly in the physical frame; only usable when
/// the grid resolves the chirp `|x|/ε` and the focused width `1-t`.
pub fn linear_layer_error_physical(
    a0: &Amplitude,
    grid: GridSpec,
    eps: f64,
    t: f64,
) -> Result<f64> {
    let profile = LinearWkbProfile::new(eps, Arc::clone(a0));
    let init = wkb_linear(&profile, grid, 0.0)?;
    let exact = free_propagate(&init, eps, t);
    let wkb = wkb_linear(&profile, grid, t)?;
    exact.l2_distance(&wkb)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LayerRow {
    pub eps: f64,
    pub t: f64,
    pub l2_error: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LinearLayerTable {
    pub rows: Vec<LayerRow>,
    /// Slope in `ε` at each fixed `1-t`, keyed by `1-t`.
    pub slopes_eps: Vec<(f64, LineFit)>,
    /// Slope in `1-t` at each fixed `ε`.
    pub slopes_layer: Vec<(f64, LineFit)>,
}

impl LinearLayerTable {
    pub fn csv(&self) -> String {
        let mut out = String::from("eps,t,l2_error\n");
        for r in &self.rows {
            out.push_str(&format!("{:e},{:.12},{:.12e}\n", r.eps, r.t, r.l2_error));
        }
        out
    }

    /// Mean fitted slopes `(in ε, in 1-t)` and the smallest `r²`.
    pub fn summary(&self) -> (f64, f64, f64) {
        let mean =
            |v: &[(f64, LineFit)]| v.iter().map(|(_, f)| f.slope).sum::<f64>() / v.len() as f64;
        let r2 = self
            .slopes_eps
            .iter()
            .chain(&self.slopes_layer)
            .map(|(_, f)| f.r2)
            .fold(1.0, f64::min);
        (mean(&self.slopes_eps), mean(&self.slopes_layer), r2)
    }
}

/// Tabulate the layer error over `eps_list × t_list` in the lens frame.
pub fn linear_layer_error(
    eps_list: &[f64],
    t_list: &[f64],
    a0: &Amplitude,
    grid: GridSpec,
) -> Result<LinearLayerTable> {
    let a0_field = sample(grid, &**a0)?;
    let boundary = a0_field.boundary_max();
    if boundary > crate::solver::BOX_DECAY_LIMIT {
        return Err(CascadeError::BoxDecay {
            boundary,
            limit: crate::solver::BOX_DECAY_LIMIT,
        });
    }
    let cells: Vec<(f64, f64)> = eps_list
        .iter()
        .flat_map(|&e| t_list.iter().map(move |&t| (e, t)))
        .collect();
    let errors: Vec<f64> = cells
        .par_iter()
        .map(|&(e, t)| linear_layer_error_lens(&a0_field, e, t))
        .collect::<Result<_>>()?;
    let rows: Vec<LayerRow> = cells
        .iter()
        .zip(&errors)
        .map(|(&(eps, t), &l2_error)| LayerRow { eps, t, l2_error })
        .collect();
    let mut slopes_eps = Vec::new();
    for &t in t_list {
        let sel: Vec<&LayerRow> = rows.iter().filter(|r| r.t == t).collect();
        if sel.len() >= 2 && t > 0.0 {
            let fit = power_fit(
                &sel.iter().map(|r| r.eps).collect::<Vec<_>>(),
                &sel.iter().map(|r| r.l2_error).collect::<Vec<_>>(),
            )?;
            slopes_eps.push((1.0 - t, fit));
        }
    }
    let mut slopes_layer = Vec::new();
    for &e in eps_list {
        let sel: Vec<&LayerRow> = rows.iter().filter(|r| r.eps == e && r.t > 0.0).collect();
        if sel.len() >= 2 {
            let fit = power_fit(
                &sel.iter().map(|r| 1.0 - r.t).collect::<Vec<_>>(),
                &sel.iter().map(|r| r.l2_error).collect::<Vec<_>>(),
            )?;
            slopes_layer.push((e, fit));
        }
    }
    Ok(LinearLayerTable {
        rows,
        slopes_eps,
        slopes_layer,
    })
}

/// `sup_x |u_lin(t, x)|` for `t < 1`, computed in the lens frame:
/// `(1-t)^{-n/2} sup |a₀ propagated for ε t/(1-t)|`.
pub fn linear_sup_norm(a0_field: &WaveField, eps: f64, t: f64) -> Result<f64> {
    if !(t < 1.0) {
        return Err(CascadeError::OutOfRange(format!(
            "lens-frame sup norm needs t < 1, got {t}"
        )));
    }
    let moved = free_propagate(a0_field, 1.0, eps * t / (1.0 - t));
    let n = a0_field.grid.dim() as f64;
    Ok((1.0 - t).powf(-n / 2.0) * moved.sup_norm())
}

/// `sup|u_lin| · (ε + |1-t|)^{n/2}`, bounded uniformly by the sharp estimate.
pub fn amplitude_bound_ratio(a0_field: &WaveField, eps: f64, t: f64) -> Result<f64> {
    let n = a0_field.grid.dim() as f64;
    Ok(linear_sup_norm(a0_field, eps, t)? * (eps + (1.0 - t).abs()).powf(n / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::unit_gaussian;

    #[test]
    fn free_propagation_basics() {
        let g = GridSpec::new(1, 256, 16.0).unwrap();
        let f = sample(g, |x| {
            C64::new(
                (-x[0] * x[0] / 2.0).exp(),
                0.3 * x[0] * (-x[0] * x[0]).exp(),
            )
        })
        .unwrap();
        let same = free_propagate(&f, 0.1, 0.0);
        let err = same
            .values
            .iter()
            .zip(&f.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-15);
        let a = free_propagate(&free_propagate(&f, 0.1, 0.3), 0.1, 0.45);
        let b = free_propagate(&f, 0.1, 0.75);
        let err = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
        assert!((b.mass() - f.mass()).abs() < 1e-12 * f.mass());
    }

    #[test]
    fn wkb_profile_examples() {
        let g = GridSpec::new(2, 128, 10.0).unwrap();
        let p = LinearWkbProfile::new(0.05, unit_gaussian());
        let w0 = wkb_linear(&p, g, 0.0).unwrap();
        let params = crate::model::make_params(0.05, 1.5, 2, 1).unwrap();
        let init =
            crate::solver::initial_data(&params, &*unit_gaussian(), g, Formulation::PhysicalU)
                .unwrap();
        assert_eq!(w0.values, init.values);
        let w = wkb_linear(&p, g, 0.75).unwrap();
        assert!((w.sup_norm() - 4.0).abs() < 1e-10);
        assert!((w.mass().sqrt() - std::f64::consts::PI.sqrt()).abs() < 1e-8);
        assert!(wkb_linear(&p, g, 1.0).is_err());
    }

    #[test]
    fn zero_time_has_zero_error() {
        let g = GridSpec::new(1, 256, 16.0).unwrap();
        let a0 = sample(g, &*unit_gaussian()).unwrap();
        assert!(linear_layer_error_lens(&a0, 1e-2, 0.0).unwrap() < 1e-14);
    }

    #[test]
    fn lens_and_physical_routes_agree() {
        let a0 = unit_gaussian();
        let eps = 0.02;
        let phys_grid = GridSpec::new(1, 8192, 10.0).unwrap();
        let lens_grid = GridSpec::new(1, 1024, 16.0).unwrap();
        let a0_field = sample(lens_grid, &*a0).unwrap();
        for t in [0.3, 0.6] {
            let direct = linear_layer_error_physical(&a0, phys_grid, eps, t).unwrap();
            let lens = linear_layer_error_lens(&a0_field, eps, t).unwrap();
            assert!(
                (direct - lens).abs() < 1e-8 * lens.max(1e-3),
                "{direct} vs {lens}"
            );
        }
    }
}
