//! Small-time expansion of the `ħ = 0` limit flow started from `(φ, a) = (0, a₀)`:
//! `φ ≈ t^{n-1}φ₁ + t^{2n-1}φ₂`, `a ≈ a₀ + t^n a₁`, its verification against
//! the integrator, and the approximant `a₀ e^{iφ(τ)/ħ}` built from the flow.

use num_complex::Complex64 as C64;

use crate::cascade::{phase_term, physical_phase_to_conformal, CascadeStack};
use crate::conformal::from_conformal;
use crate::error::{CascadeError, Result};
use crate::fit::{line_fit, power_fit, LineFit};
use crate::grenier::{continue_limit, integrate_limit, FlowOptions, HydroState};
use crate::grid::{Formulation, RealField, Spectral, WaveField};
use crate::model::{Nonlinearity, PhysParams};

/// Conformal time below which the flow phase is taken from the two-term series.
pub const SERIES_SWITCH: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct SeriesCoeffs {
    pub a0: WaveField,
    pub phi1: RealField,
    pub a1: WaveField,
    pub phi2: RealField,
    pub params: PhysParams,
    pub nl_label: String,
}

fn real_to_complex(values: &[f64]) -> Vec<C64> {
    values.iter().map(|&v| C64::new(v, 0.0)).collect()
}

pub fn compute_coeffs(
    a0: &WaveField,
    params: &PhysParams,
    nl: &Nonlinearity,
) -> Result<SeriesCoeffs> {
    let grid = a0.grid;
    let n = params.n_dim;
    if n < 2 {
        return Err(CascadeError::InvalidParams(format!(
            "small-time series needs n >= 2, got {n}"
        )));
    }
    if grid.dim() != n {
        return Err(CascadeError::GridMismatch(format!(
            "grid dimension {} vs n = {n}",
            grid.dim()
        )));
    }
    let nf = n as f64;
    let slope = nl.f_prime(0.0);
    let curvature = nl.f_second(0.0);
    let spectral = Spectral::new(grid);

    let density: Vec<f64> = a0.values.iter().map(|v| v.norm_sqr()).collect();
    let phi1: Vec<f64> = density.iter().map(|d| -slope * d / (nf - 1.0)).collect();
    let (grad_phi1, lap_phi1) = spectral.gradient_and_laplacian(&real_to_complex(&phi1));
    let grad_a0 = spectral.gradient(&a0.values);

    let a1: Vec<C64> = (0..grid.len())
        .map(|i| {
            let transport: C64 = grad_phi1
                .iter()
                .zip(&grad_a0)
                .map(|(gp, ga)| gp[i].re * ga[i])
                .sum();
            -(transport + 0.5 * a0.values[i] * lap_phi1[i].re) / nf
        })
        .collect();
    let phi2: Vec<f64> = (0..grid.len())
        .map(|i| {
            let grad_sq: f64 = grad_phi1.iter().map(|g| g[i].re * g[i].re).sum();
            let cross = (a0.values[i].conj() * a1[i]).re;
            -(0.5 * grad_sq + 2.0 * cross * slope + 0.5 * curvature * density[i] * density[i])
                / (2.0 * nf - 1.0)
        })
        .collect();

    Ok(SeriesCoeffs {
        a0: a0.clone(),
        phi1: RealField::new(grid, phi1)?,
        a1: WaveField::new(grid, a1, 0.0, a0.formulation)?,
        phi2: RealField::new(grid, phi2)?,
        params: *params,
        nl_label: nl.label().to_string(),
    })
}

impl SeriesCoeffs {
    fn n(&self) -> f64 {
        self.params.n_dim as f64
    }

    /// `t^{n-1}φ₁ + t^{2n-1}φ₂`
    pub fn phase(&self, t: f64) -> RealField {
        let mut out = self.phi1.scaled(t.powf(self.n() - 1.0));
        out.axpy(t.powf(2.0 * self.n() - 1.0), &self.phi2);
        out
    }

    /// `a₀ + t^n a₁`
    pub fn amplitude(&self, t: f64) -> Vec<C64> {
        let w = t.powf(self.n());
        self.a0
            .values
            .iter()
            .zip(&self.a1.values)
            .map(|(a, b)| a + w * b)
            .collect()
    }

    /// Linear index of the node closest to the origin.
    pub fn origin_index(&self) -> usize {
        let r2 = self.a0.grid.radius_sq();
        (0..r2.len())
            .min_by(|&i, &j| r2[i].total_cmp(&r2[j]))
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct OrderFit {
    pub sobolev: u32,
    pub norms: Vec<f64>,
    pub fit: LineFit,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RemainderOrders {
    pub t_samples: Vec<f64>,
    /// `‖φ(t) - t^{n-1}φ₁‖_{H^s}`
    pub first: Vec<OrderFit>,
    /// `‖φ(t) - t^{n-1}φ₁ - t^{2n-1}φ₂‖_{H^s}`
    pub second: Vec<OrderFit>,
    /// `‖a(t) - a₀ - t^n a₁‖_{H^s}`
    pub amplitude: Vec<OrderFit>,
    pub expected_first: f64,
    pub expected_second: f64,
    pub expected_amplitude: f64,
    pub phi2_origin_formula: f64,
    /// Intercept of `(φ(t,0) - t^{n-1}φ₁(0))/t^{2n-1}` extrapolated in `t^n`.
    pub phi2_origin_fitted: f64,
}

impl RemainderOrders {
    pub fn phi2_relative_mismatch(&self) -> f64 {
        (self.phi2_origin_fitted - self.phi2_origin_formula).abs() / self.phi2_origin_formula.abs()
    }
}

/// Sobolev orders at which remainders are fitted.
pub const REMAINDER_ORDERS: [u32; 2] = [0, 1];

fn check_geometric(samples: &[f64]) -> Result<Vec<f64>> {
    let mut t = samples.to_vec();
    t.sort_by(f64::total_cmp);
    if t.len() < 4 || !(t[0] > 0.0) {
        return Err(CascadeError::InvalidParams(
            "need at least 4 positive time samples".into(),
        ));
    }
    let ratio = t[1] / t[0];
    if t.windows(2)
        .any(|w| ((w[1] / w[0]) / ratio - 1.0).abs() > 1e-9)
        || ratio <= 1.0
    {
        return Err(CascadeError::InvalidParams(
            "time samples must form a geometric progression".into(),
        ));
    }
    Ok(t)
}

/// Integrate the limit flow with step `dt` and fit the decay orders of the
/// series remainders at `t_samples`.
pub fn series_remainder_order(
    coeffs: &SeriesCoeffs,
    nl: &Nonlinearity,
    t_samples: &[f64],
    dt: f64,
) -> Result<RemainderOrders> {
    let t = check_geometric(t_samples)?;
    let t_max = *t.last().unwrap_or(&0.0);
    let run = integrate_limit(
        &coeffs.a0,
        nl,
        t_max,
        dt,
        &FlowOptions::recording(t.clone()),
    )?;
    let spectral = Spectral::new(coeffs.a0.grid);
    let n = coeffs.n();
    let origin = coeffs.origin_index();

    let mut first_rem = Vec::new();
    let mut second_rem = Vec::new();
    let mut amp_rem = Vec::new();
    let mut reduced = Vec::new();
    for (state, &ts) in run.snapshots.iter().zip(&t) {
        let lead = ts.powf(n - 1.0);
        let next = ts.powf(2.0 * n - 1.0);
        let first: Vec<f64> = state
            .phi
            .values
            .iter()
            .zip(&coeffs.phi1.values)
            .map(|(p, q)| p - lead * q)
            .collect();
        let second: Vec<f64> = first
            .iter()
            .zip(&coeffs.phi2.values)
            .map(|(p, q)| p - next * q)
            .collect();
        let amp: Vec<C64> = state
            .amplitude()
            .iter()
            .zip(coeffs.amplitude(ts))
            .map(|(a, b)| a - b)
            .collect();
        reduced.push(first[origin] / next);
        first_rem.push(real_to_complex(&first));
        second_rem.push(real_to_complex(&second));
        amp_rem.push(amp);
    }

    let fit_all = |fields: &[Vec<C64>]| -> Result<Vec<OrderFit>> {
        REMAINDER_ORDERS
            .iter()
            .map(|&s| {
                let norms: Vec<f64> = fields
                    .iter()
                    .map(|f| spectral.sobolev_sq(f, s as f64).sqrt())
                    .collect();
                Ok(OrderFit {
                    sobolev: s,
                    fit: power_fit(&t, &norms)?,
                    norms,
                })
            })
            .collect()
    };
    let shifted: Vec<f64> = t.iter().map(|ts| ts.powf(n)).collect();
    let extrapolated = line_fit(&shifted, &reduced)?;

    Ok(RemainderOrders {
        first: fit_all(&first_rem)?,
        second: fit_all(&second_rem)?,
        amplitude: fit_all(&amp_rem)?,
        expected_first: 2.0 * n - 1.0,
        expected_second: 3.0 * n - 1.0,
        expected_amplitude: 2.0 * n,
        phi2_origin_formula: coeffs.phi2.values[origin],
        phi2_origin_fitted: extrapolated.intercept,
        t_samples: t,
    })
}

/// The limit flow `φ(τ)` on demand: series below [`SERIES_SWITCH`], otherwise
/// the integrator restarted from the nearest stored checkpoint.
#[derive(Debug, Clone)]
pub struct LimitFlow {
    pub coeffs: SeriesCoeffs,
    nl: Nonlinearity,
    dt: f64,
    checkpoints: Vec<HydroState>,
    reach: f64,
}

impl LimitFlow {
    /// Integrate up to conformal time `reach`, storing a state every `spacing`.
    pub fn new(
        coeffs: SeriesCoeffs,
        nl: &Nonlinearity,
        reach: f64,
        dt: f64,
        spacing: f64,
    ) -> Result<Self> {
        if !(reach > 0.0 && spacing > 0.0) {
            return Err(CascadeError::InvalidParams(
                "limit flow needs positive reach and spacing".into(),
            ));
        }
        let count = (reach / spacing).floor() as usize;
        let times: Vec<f64> = (1..=count)
            .map(|i| i as f64 * spacing)
            .filter(|&s| s < reach)
            .collect();
        let run = integrate_limit(&coeffs.a0, nl, reach, dt, &FlowOptions::recording(times))?;
        let mut checkpoints = vec![HydroState::from_amplitude(&coeffs.a0, 0.0, 0.0)];
        checkpoints.extend(run.snapshots);
        checkpoints.push(run.final_state);
        Ok(LimitFlow {
            coeffs,
            nl: nl.clone(),
            dt,
            checkpoints,
            reach,
        })
    }

    pub fn reach(&self) -> f64 {
        self.reach
    }

    /// Integrated state at `tau` (no series shortcut).
    pub fn state(&self, tau: f64) -> Result<HydroState> {
        let tau = if tau > self.reach && tau <= self.reach * (1.0 + 1e-12) {
            self.reach
        } else {
            tau
        };
        if !(tau >= 0.0 && tau <= self.reach) {
            return Err(CascadeError::OutOfRange(format!(
                "conformal time {tau} outside [0, {}]",
                self.reach
            )));
        }
        let base = self
            .checkpoints
            .iter()
            .rev()
            .find(|c| c.time <= tau)
            .unwrap_or(&self.checkpoints[0]);
        if base.time == tau {
            return Ok(base.clone());
        }
        Ok(continue_limit(base, &self.nl, tau, self.dt, &FlowOptions::default())?.final_state)
    }

    /// Phases at ascending conformal times `taus` from a single integration pass.
    pub fn phases(&self, taus: &[f64]) -> Result<Vec<RealField>> {
        if taus.windows(2).any(|w| w[1] < w[0]) {
            return Err(CascadeError::InvalidParams(
                "conformal times must be ascending".into(),
            ));
        }
        let split = taus.partition_point(|&t| t < SERIES_SWITCH);
        let mut out: Vec<RealField> = taus[..split]
            .iter()
            .map(|&t| self.coeffs.phase(t))
            .collect();
        let rest = &taus[split..];
        let Some(&last) = rest.last() else {
            return Ok(out);
        };
        if last > self.reach * (1.0 + 1e-12) {
            return Err(CascadeError::OutOfRange(format!(
                "conformal time {last} outside [0, {}]",
                self.reach
            )));
        }
        let last = last.min(self.reach);
        let times: Vec<f64> = rest.iter().map(|&t| t.min(last)).collect();
        let base = self
            .checkpoints
            .iter()
            .rev()
            .find(|c| c.time <= times[0])
            .unwrap_or(&self.checkpoints[0]);
        if base.time == last {
            out.extend(times.iter().map(|_| base.phi.clone()));
            return Ok(out);
        }
        let start = times.partition_point(|&t| t <= base.time);
        out.extend(times[..start].iter().map(|_| base.phi.clone()));
        let run = continue_limit(
            base,
            &self.nl,
            last,
            self.dt,
            &FlowOptions::recording(times[start..].to_vec()),
        )?;
        out.extend(run.snapshots.into_iter().map(|s| s.phi));
        Ok(out)
    }

    pub fn phase(&self, tau: f64) -> Result<RealField> {
        if (0.0..SERIES_SWITCH).contains(&tau) {
            return Ok(self.coeffs.phase(tau));
        }
        Ok(self.state(tau)?.phi)
    }

    /// `sup |φ(τ)|/ħ`, the largest phase shift in radians.
    pub fn phase_shift_sup(&self, params: &PhysParams, t: f64) -> Result<f64> {
        Ok(self.phase(params.conformal_time(t))?.sup_norm() / params.hbar)
    }
}

/// `a₀ e^{iφ/ħ}` for a given phase field, stamped at conformal time `tau`.
pub fn phase_shifted(a0: &WaveField, phase: &RealField, hbar: f64, tau: f64) -> Result<WaveField> {
    a0.grid.ensure_same(&phase.grid)?;
    let values = a0
        .values
        .iter()
        .zip(&phase.values)
        .map(|(a, p)| a * C64::from_polar(1.0, p / hbar))
        .collect();
    WaveField::new(phase.grid, values, tau, Formulation::ConformalPsi)
}

/// `a₀ e^{iφ(τ)/ħ}` at conformal time `tau`, on the reference grid.
pub fn theorem_approximant_conformal(
    flow: &LimitFlow,
    params: &PhysParams,
    tau: f64,
) -> Result<WaveField> {
    phase_shifted(&flow.coeffs.a0, &flow.phase(tau)?, params.hbar, tau)
}

/// The physical approximant at time `t`, on the reference grid scaled by `1-t`.
pub fn theorem_approximant(flow: &LimitFlow, params: &PhysParams, t: f64) -> Result<WaveField> {
    if !(t < 1.0) {
        return Err(CascadeError::OutOfRange(format!(
            "approximant needs t < 1, got {t}"
        )));
    }
    from_conformal(
        &theorem_approximant_conformal(flow, params, params.conformal_time(t))?,
        params,
    )
}

/// `sup_ξ |φ(τ, ξ)|` tabulated on a geometric grid of conformal times.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PhaseProfile {
    pub taus: Vec<f64>,
    pub sups: Vec<f64>,
}

impl PhaseProfile {
    pub fn new(flow: &LimitFlow, tau_min: f64, tau_max: f64, count: usize) -> Result<Self> {
        if !(tau_min > 0.0 && tau_max > tau_min && count >= 2) {
            return Err(CascadeError::InvalidParams(
                "phase profile needs 0 < tau_min < tau_max and 2+ points".into(),
            ));
        }
        let ratio = (tau_max / tau_min).ln() / (count - 1) as f64;
        let mut taus: Vec<f64> = (0..count)
            .map(|i| tau_min * (ratio * i as f64).exp())
            .collect();
        taus[count - 1] = tau_max;
        let sups = flow
            .phases(&taus)?
            .iter()
            .map(RealField::sup_norm)
            .collect();
        Ok(PhaseProfile { taus, sups })
    }

    /// Conformal time where `sup|φ|` first reaches `level`, interpolated in log-log.
    pub fn crossing(&self, level: f64) -> Option<f64> {
        let lt: Vec<f64> = self.taus.iter().map(|t| t.ln()).collect();
        let ls: Vec<f64> = self.sups.iter().map(|s| s.ln()).collect();
        crate::fit::first_crossing(&lt, &ls, level.ln()).map(f64::exp)
    }

    /// Width `1-t` at which the phase shift `sup|φ|/ħ` reaches 1.
    pub fn onset_layer(&self, params: &PhysParams) -> Result<f64> {
        let tau = self.crossing(params.hbar).ok_or_else(|| {
            CascadeError::OutOfRange(format!(
                "phase shift does not cross 1 inside the profile at eps = {}",
                params.eps
            ))
        })?;
        Ok(params.t0 / tau)
    }

    /// Fit of `ln(onset layer)` against `ln ε`.
    pub fn onset_exponent(&self, params: &PhysParams, eps_list: &[f64]) -> Result<LineFit> {
        let layers: Vec<f64> = eps_list
            .iter()
            .map(|&e| self.onset_layer(&params.with_eps(e)?))
            .collect::<Result<_>>()?;
        power_fit(eps_list, &layers)
    }
}

/// `j`-th cascade term at physical time `t` carried to the conformal frame.
fn mapped_cascade_term(
    stack: &CascadeStack,
    coeffs: &SeriesCoeffs,
    j: usize,
    t: f64,
) -> Result<RealField> {
    let physical_grid = stack.grid.scaled(1.0 - t)?;
    let mapped = physical_phase_to_conformal(
        &phase_term(stack, j, t, stack.params.eps, physical_grid)?,
        &stack.params,
        t,
    )?;
    coeffs.phi1.grid.ensure_same(&mapped.grid)?;
    Ok(mapped)
}

fn sup_difference(a: &RealField, b: &RealField) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `sup |mapped g₁ term - τ^{n-1}φ₁|` at physical time `t`.
pub fn first_layer_gap(stack: &CascadeStack, coeffs: &SeriesCoeffs, t: f64) -> Result<f64> {
    let tau = stack.params.conformal_time(t);
    let mapped = mapped_cascade_term(stack, coeffs, 1, t)?;
    Ok(sup_difference(
        &mapped,
        &coeffs.phi1.scaled(tau.powf(coeffs.n() - 1.0)),
    ))
}

/// `sup |mapped g₂ term - τ^{2n-1}φ₂|` at physical time `t`.
pub fn second_order_gap(stack: &CascadeStack, coeffs: &SeriesCoeffs, t: f64) -> Result<f64> {
    let tau = stack.params.conformal_time(t);
    let mapped = mapped_cascade_term(stack, coeffs, 2, t)?;
    Ok(sup_difference(
        &mapped,
        &coeffs.phi2.scaled(tau.powf(2.0 * coeffs.n() - 1.0)),
    ))
}
