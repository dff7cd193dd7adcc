//! Phase/amplitude (hydrodynamic) form of the conformal equation: the exact
//! system with the dispersive `iħ/2 Δa` term, its velocity form, and the
//! `ħ = 0` limit system, integrated pseudospectrally with classical RK4.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::error::{CascadeError, Result};
use crate::fit::{power_fit, LineFit};
use crate::grid::{Formulation, GridSpec, RealField, Spectral, WaveField};
use crate::model::{Nonlinearity, PhysParams};

/// `sup |∇v|` beyond which the limit flow is declared to approach its lifespan.
pub const GRADIENT_LIMIT: f64 = 1e3;
/// Largest tolerated step-to-step growth of the state sup norm.
pub const GROWTH_LIMIT: f64 = 10.0;

/// `ψ = a e^{iφ/ħ}` split into real amplitude parts and the phase.
#[derive(Debug, Clone, PartialEq)]
pub struct HydroState {
    pub a_re: RealField,
    pub a_im: RealField,
    pub phi: RealField,
    pub time: f64,
    /// Zero for the limit system.
    pub hbar: f64,
}

impl HydroState {
    /// Amplitude `a₀`, zero phase.
    pub fn from_amplitude(a0: &WaveField, time: f64, hbar: f64) -> Self {
        let grid = a0.grid;
        Self {
            a_re: RealField {
                grid,
                values: a0.values.iter().map(|v| v.re).collect(),
            },
            a_im: RealField {
                grid,
                values: a0.values.iter().map(|v| v.im).collect(),
            },
            phi: RealField::zeros(grid),
            time,
            hbar,
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.phi.grid
    }

    pub fn amplitude(&self) -> Vec<C64> {
        self.a_re
            .values
            .iter()
            .zip(&self.a_im.values)
            .map(|(&r, &i)| C64::new(r, i))
            .collect()
    }

    pub fn amplitude_field(&self) -> WaveField {
        WaveField {
            grid: self.grid(),
            values: self.amplitude(),
            time: self.time,
            formulation: Formulation::Auxiliary,
        }
    }

    /// `v = ∇φ`, curl-free by construction.
    pub fn velocity(&self) -> Vec<RealField> {
        crate::grid::spectral_gradient(&self.phi)
    }

    /// `‖a‖_{L²}`
    pub fn amplitude_norm(&self) -> f64 {
        let dv = self.grid().cell_volume();
        (self
            .a_re
            .values
            .iter()
            .zip(&self.a_im.values)
            .map(|(r, i)| r * r + i * i)
            .sum::<f64>()
            * dv)
            .sqrt()
    }
}

/// Velocity form `(a, v)` of the same system.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityState {
    pub a_re: RealField,
    pub a_im: RealField,
    pub velocity: Vec<RealField>,
    pub time: f64,
    pub hbar: f64,
}

impl VelocityState {
    pub fn from_amplitude(a0: &WaveField, time: f64, hbar: f64) -> Self {
        let h = HydroState::from_amplitude(a0, time, hbar);
        let velocity = (0..a0.grid.dim())
            .map(|_| RealField::zeros(a0.grid))
            .collect();
        Self {
            a_re: h.a_re,
            a_im: h.a_im,
            velocity,
            time,
            hbar,
        }
    }

    pub fn amplitude(&self) -> Vec<C64> {
        self.a_re
            .values
            .iter()
            .zip(&self.a_im.values)
            .map(|(&r, &i)| C64::new(r, i))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct HydroTrajectory {
    /// States at the requested record times, in order.
    pub snapshots: Vec<HydroState>,
    pub final_state: HydroState,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct VelocityTrajectory {
    pub snapshots: Vec<VelocityState>,
    pub final_state: VelocityState,
    pub steps: usize,
}

/// Recording and monitoring options shared by the integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowOptions {
    pub record_times: Vec<f64>,
    /// The coefficients are evaluated at `t + time_offset`.
    pub time_offset: f64,
    /// Abort with [`CascadeError::Lifespan`] when `sup|∇v|` exceeds this.
    pub gradient_limit: Option<f64>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            record_times: Vec::new(),
            time_offset: 0.0,
            gradient_limit: Some(GRADIENT_LIMIT),
        }
    }
}

impl FlowOptions {
    pub fn recording(times: Vec<f64>) -> Self {
        Self {
            record_times: times,
            ..Self::default()
        }
    }

    pub fn shifted(mut self, offset: f64) -> Self {
        self.time_offset = offset;
        self
    }
}

/// RK4 step size safe for the dispersive term and transport at speed `speed`
/// on `grid`: `1/(ħ k²/2 + speed·k + 1)` with `k` the Nyquist wavenumber.
pub fn stable_dt(grid: GridSpec, hbar: f64, speed: f64) -> f64 {
    let k = std::f64::consts::PI / grid.spacing();
    1.0 / (0.5 * hbar * k * k + speed * k + 1.0)
}

/// Right-hand sides on packed real state vectors.
struct Rhs<'a> {
    spectral: Spectral,
    nl: &'a Nonlinearity,
    n_dim: usize,
    hbar: f64,
    offset: f64,
}

impl<'a> Rhs<'a> {
    fn new(grid: GridSpec, nl: &'a Nonlinearity, hbar: f64, offset: f64) -> Self {
        Self {
            spectral: Spectral::new(grid),
            nl,
            n_dim: grid.dim(),
            hbar,
            offset,
        }
    }

    fn len(&self) -> usize {
        self.spectral.grid().len()
    }

    /// `a_t = -½(v·∇a + ∇·(va)) + iħ/2 Δa`; the skew form keeps `‖a‖` exact
    /// in the semi-discrete system.
    fn amplitude_rate(&self, a: &[C64], v: &[Vec<f64>], out_re: &mut [f64], out_im: &mut [f64]) {
        let (grad_a, lap_a) = self.spectral.gradient_and_laplacian(a);
        let flux: Vec<Vec<C64>> = v
            .iter()
            .map(|vj| vj.iter().zip(a).map(|(s, z)| z * s).collect())
            .collect();
        let div = self.spectral.divergence(&flux, false);
        for i in 0..a.len() {
            let mut adv = div[i];
            for (vj, gj) in v.iter().zip(&grad_a) {
                adv += gj[i] * vj[i];
            }
            let rate = -0.5 * adv + C64::new(0.0, 0.5 * self.hbar) * lap_a[i];
            out_re[i] = rate.re;
            out_im[i] = rate.im;
        }
    }

    /// Packed `[φ, a_re, a_im]`.
    fn phase_form(&self, y: &[f64], t: f64) -> Vec<f64> {
        let m = self.len();
        let tc = t + self.offset;
        let (phi, rest) = y.split_at(m);
        let (a_re, a_im) = rest.split_at(m);
        let a: Vec<C64> = a_re
            .iter()
            .zip(a_im)
            .map(|(&r, &i)| C64::new(r, i))
            .collect();
        let phi_c: Vec<C64> = phi.iter().map(|&p| C64::new(p, 0.0)).collect();
        let grad_phi: Vec<Vec<f64>> = self
            .spectral
            .gradient(&phi_c)
            .into_iter()
            .map(|g| g.into_iter().map(|z| z.re).collect())
            .collect();
        let mut out = vec![0.0; 3 * m];
        let mut phase_rate: Vec<C64> = (0..m)
            .map(|i| {
                let speed_sq: f64 = grad_phi.iter().map(|g| g[i] * g[i]).sum();
                C64::new(
                    -0.5 * speed_sq - self.nl.conformal_potential(tc, self.n_dim, a[i].norm_sqr()),
                    0.0,
                )
            })
            .collect();
        self.spectral.forward(&mut phase_rate);
        self.spectral.dealias_spectrum(&mut phase_rate);
        self.spectral.inverse(&mut phase_rate);
        for (o, r) in out[..m].iter_mut().zip(&phase_rate) {
            *o = r.re;
        }
        let (_, rest) = out.split_at_mut(m);
        let (o_re, o_im) = rest.split_at_mut(m);
        self.amplitude_rate(&a, &grad_phi, o_re, o_im);
        out
    }

    /// Packed `[v_1..v_n, a_re, a_im]`.
    fn velocity_form(&self, y: &[f64], t: f64) -> Vec<f64> {
        let m = self.len();
        let n = self.n_dim;
        let tc = t + self.offset;
        let v: Vec<Vec<f64>> = (0..n).map(|j| y[j * m..(j + 1) * m].to_vec()).collect();
        let a: Vec<C64> = (0..m)
            .map(|i| C64::new(y[n * m + i], y[(n + 1) * m + i]))
            .collect();
        let grad_a = self.spectral.gradient(&a);
        let grad_v: Vec<Vec<Vec<C64>>> = v
            .iter()
            .map(|vj| {
                self.spectral
                    .gradient(&vj.iter().map(|&s| C64::new(s, 0.0)).collect::<Vec<_>>())
            })
            .collect();
        let mut out = vec![0.0; (n + 2) * m];
        for comp in 0..n {
            let mut rate: Vec<C64> = (0..m)
                .map(|i| {
                    let mut adv = 0.0;
                    for j in 0..n {
                        adv += v[j][i] * grad_v[comp][j][i].re;
                    }
                    let stiff = self.nl.conformal_stiffness(tc, n, a[i].norm_sqr());
                    let pressure = 2.0 * stiff * (a[i].conj() * grad_a[comp][i]).re;
                    C64::new(-adv - pressure, 0.0)
                })
                .collect();
            self.spectral.forward(&mut rate);
            self.spectral.dealias_spectrum(&mut rate);
            self.spectral.inverse(&mut rate);
            for (o, r) in out[comp * m..(comp + 1) * m].iter_mut().zip(&rate) {
                *o = r.re;
            }
        }
        let (_, rest) = out.split_at_mut(n * m);
        let (o_re, o_im) = rest.split_at_mut(m);
        self.amplitude_rate(&a, &v, o_re, o_im);
        out
    }

    /// `sup_x |∂_i v_j|` over all pairs.
    fn velocity_gradient_sup(&self, v: &[Vec<f64>]) -> f64 {
        let mut sup = 0.0_f64;
        for vj in v {
            let c: Vec<C64> = vj.iter().map(|&s| C64::new(s, 0.0)).collect();
            for g in self.spectral.gradient(&c) {
                sup = g.iter().fold(sup, |m, z| m.max(z.re.abs()));
            }
        }
        sup
    }
}

fn rk4(y: &[f64], t: f64, h: f64, f: &dyn Fn(&[f64], f64) -> Vec<f64>) -> Vec<f64> {
    let shift = |base: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(a, b)| a + c * b).collect()
    };
    let k1 = f(y, t);
    let k2 = f(&shift(y, &k1, 0.5 * h), t + 0.5 * h);
    let k3 = f(&shift(y, &k2, 0.5 * h), t + 0.5 * h);
    let k4 = f(&shift(y, &k3, h), t + h);
    (0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Step `y` from `t_start` to `t_end`, landing on every record time, with the
/// NaN, growth and gradient monitors. `speed_of` extracts the velocity
/// components used by the gradient monitor; `sup_of` the state sup norm.
#[allow(clippy::too_many_arguments)]
fn march(
    y0: Vec<f64>,
    t_start: f64,
    t_end: f64,
    dt: f64,
    opts: &FlowOptions,
    rate: &dyn Fn(&[f64], f64) -> Vec<f64>,
    velocity_of: &dyn Fn(&[f64]) -> Vec<Vec<f64>>,
    gradient_sup: &dyn Fn(&[Vec<f64>]) -> f64,
    sup_of: &dyn Fn(&[f64]) -> f64,
    mut record: impl FnMut(&[f64], f64),
) -> Result<(Vec<f64>, usize)> {
    if !(dt > 0.0) || !(t_end >= t_start) {
        return Err(CascadeError::InvalidParams(format!(
            "bad time window [{t_start}, {t_end}] with dt = {dt}"
        )));
    }
    // Round-off in caller-built time lists (powf, sums) is snapped to the window.
    let slack = 1e-12 * t_end.abs().max(1.0);
    let mut targets: Vec<f64> = opts
        .record_times
        .iter()
        .map(|&r| {
            if r > t_end && r <= t_end + slack {
                t_end
            } else {
                r
            }
        })
        .collect();
    if targets.windows(2).any(|w| w[1] < w[0]) || targets.iter().any(|&r| r < t_start || r > t_end)
    {
        return Err(CascadeError::InvalidParams(
            "record times must be sorted inside the run window".into(),
        ));
    }
    let n_records = targets.len();
    targets.push(t_end);
    let mut y = y0;
    let mut t = t_start;
    let mut steps = 0usize;
    let mut last_sup = sup_of(&y);
    for (i, &target) in targets.iter().enumerate() {
        let span = target - t;
        if span > 0.0 {
            let count = (span / dt).ceil().max(1.0) as usize;
            let h = span / count as f64;
            for j in 0..count {
                let t_now = t + j as f64 * h;
                let next = rk4(&y, t_now, h, rate);
                steps += 1;
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(CascadeError::SolverAbort {
                        step: steps,
                        time: t_now + h,
                        reason: "non-finite value".into(),
                    });
                }
                let sup = sup_of(&next);
                if last_sup > 0.0 && sup > GROWTH_LIMIT * last_sup {
                    return Err(CascadeError::SolverAbort {
                        step: steps,
                        time: t_now + h,
                        reason: format!(
                            "sup norm grew from {last_sup:.3e} to {sup:.3e} in one step"
                        ),
                    });
                }
                if let Some(limit) = opts.gradient_limit {
                    if gradient_sup(&velocity_of(&next)) > limit {
                        return Err(CascadeError::Lifespan {
                            last_good_time: t_now,
                        });
                    }
                }
                last_sup = sup;
                y = next;
            }
            t = target;
        }
        if i < n_records {
            record(&y, target);
        }
    }
    Ok((y, steps))
}

fn unpack_hydro(y: &[f64], grid: GridSpec, time: f64, hbar: f64) -> HydroState {
    let m = grid.len();
    HydroState {
        phi: RealField {
            grid,
            values: y[..m].to_vec(),
        },
        a_re: RealField {
            grid,
            values: y[m..2 * m].to_vec(),
        },
        a_im: RealField {
            grid,
            values: y[2 * m..].to_vec(),
        },
        time,
        hbar,
    }
}

fn run_phase_form(
    initial: &HydroState,
    nl: &Nonlinearity,
    t_end: f64,
    dt: f64,
    opts: &FlowOptions,
) -> Result<HydroTrajectory> {
    let grid = initial.grid();
    let m = grid.len();
    let rhs = Rhs::new(grid, nl, initial.hbar, opts.time_offset);
    let mut y0 = initial.phi.values.clone();
    y0.extend_from_slice(&initial.a_re.values);
    y0.extend_from_slice(&initial.a_im.values);
    let velocity_of = |y: &[f64]| -> Vec<Vec<f64>> {
        let c: Vec<C64> = y[..m].iter().map(|&p| C64::new(p, 0.0)).collect();
        rhs.spectral
            .gradient(&c)
            .into_iter()
            .map(|g| g.into_iter().map(|z| z.re).collect())
            .collect()
    };
    let sup_of =
        |y: &[f64]| -> f64 { (0..m).fold(0.0_f64, |s, i| s.max(y[m + i].hypot(y[2 * m + i]))) };
    let mut snapshots = Vec::new();
    let hbar = initial.hbar;
    let (y, steps) = march(
        y0,
        initial.time,
        t_end,
        dt,
        opts,
        &|y, t| rhs.phase_form(y, t),
        &velocity_of,
        &|v| rhs.velocity_gradient_sup(v),
        &sup_of,
        |y, t| snapshots.push(unpack_hydro(y, grid, t, hbar)),
    )?;
    Ok(HydroTrajectory {
        snapshots,
        final_state: unpack_hydro(&y, grid, t_end, hbar),
        steps,
    })
}

/// Integrate the exact system (phase form) from `initial.time` to `t_end`.
pub fn integrate_exact(
    initial: &HydroState,
    nl: &Nonlinearity,
    t_end: f64,
    dt: f64,
    opts: &FlowOptions,
) -> Result<HydroTrajectory> {
    if !(initial.hbar > 0.0) {
        return Err(CascadeError::InvalidParams(
            "the exact system needs hbar > 0".into(),
        ));
    }
    let tc = initial.time + opts.time_offset;
    if !(tc > 0.0) && initial.grid().dim() < 2 {
        return Err(CascadeError::InvalidParams(
            "start time must be positive when n < 2".into(),
        ));
    }
    run_phase_form(initial, nl, t_end, dt, opts)
}

/// Integrate the `ħ = 0` limit system from `t = 0` with `φ = 0`, `a = a₀`.
pub fn integrate_limit(
    a0: &WaveField,
    nl: &Nonlinearity,
    t_end: f64,
    dt: f64,
    opts: &FlowOptions,
) -> Result<HydroTrajectory> {
    if a0.grid.dim() < 2 {
        return Err(CascadeError::InvalidParams(
            "the limit system starts at t = 0 only for n >= 2".into(),
        ));
    }
    run_phase_form(
        &HydroState::from_amplitude(a0, 0.0, 0.0),
        nl,
        t_end,
        dt,
        opts,
    )
}

/// Continue the limit system from an intermediate `ħ = 0` state.
pub fn continue_limit(
    state: &HydroState,
    nl: &Nonlinearity,
    t_end: f64,
    dt: f64,
    opts: &FlowOptions,
) -> Result<HydroTrajectory> {
    if state.hbar != 0.0 {
        return Err(CascadeError::InvalidParams(
            "continue_limit needs a limit-system state (hbar = 0)".into(),
        ));
    }
    run_phase_form(state, nl, t_end, dt, opts)
}

/// Integrate the velocity form from `initial.time` to `t_end`.
pub fn integrate_velocity(
    initial: &VelocityState,
    nl: &Nonlinearity,
    t_end: f64,
    dt: f64,
    opts: &FlowOptions,
) -> Result<VelocityTrajectory> {
    let grid = initial.a_re.grid;
    let m = grid.len();
    let n = grid.dim();
    let rhs = Rhs::new(grid, nl, initial.hbar, opts.time_offset);
    let mut y0 = Vec::with_capacity((n + 2) * m);
    for v in &initial.velocity {
        y0.extend_from_slice(&v.values);
    }
    y0.extend_from_slice(&initial.a_re.values);
    y0.extend_from_slice(&initial.a_im.values);
    let hbar = initial.hbar;
    let unpack = |y: &[f64], time: f64| VelocityState {
        velocity: (0..n)
            .map(|j| RealField {
                grid,
                values: y[j * m..(j + 1) * m].to_vec(),
            })
            .collect(),
        a_re: RealField {
            grid,
            values: y[n * m..(n + 1) * m].to_vec(),
        },
        a_im: RealField {
            grid,
            values: y[(n + 1) * m..].to_vec(),
        },
        time,
        hbar,
    };
    let velocity_of =
        |y: &[f64]| -> Vec<Vec<f64>> { (0..n).map(|j| y[j * m..(j + 1) * m].to_vec()).collect() };
    let sup_of = |y: &[f64]| -> f64 {
        (0..m).fold(0.0_f64, |s, i| {
            s.max(y[n * m + i].hypot(y[(n + 1) * m + i]))
        })
    };
    let mut snapshots = Vec::new();
    let (y, steps) = march(
        y0,
        initial.time,
        t_end,
        dt,
        opts,
        &|y, t| rhs.velocity_form(y, t),
        &velocity_of,
        &|v| rhs.velocity_gradient_sup(v),
        &sup_of,
        |y, t| snapshots.push(unpack(y, t)),
    )?;
    Ok(VelocityTrajectory {
        snapshots,
        final_state: unpack(&y, t_end),
        steps,
    })
}

/// `‖∇φ - v‖_{L²}/‖v‖_{L²}` between the two forms at matching times.
pub fn gradient_consistency(phase: &HydroState, velocity: &VelocityState) -> Result<f64> {
    let grid = phase.grid();
    if !grid.same_as(&velocity.a_re.grid) {
        return Err(CascadeError::GridMismatch(
            "phase and velocity states live on different grids".into(),
        ));
    }
    let dv = grid.cell_volume();
    let mut diff = 0.0;
    let mut size = 0.0;
    for (g, v) in phase.velocity().iter().zip(&velocity.velocity) {
        for (a, b) in g.values.iter().zip(&v.values) {
            diff += (a - b) * (a - b);
            size += b * b;
        }
    }
    if size == 0.0 {
        return Ok((diff * dv).sqrt());
    }
    Ok((diff / size).sqrt())
}

/// `ψ = a e^{iφ/ħ}` as a conformal-frame field.
pub fn reconstruct_psi(state: &HydroState) -> Result<WaveField> {
    if !(state.hbar > 0.0) {
        return Err(CascadeError::InvalidParams(
            "reconstruction needs hbar > 0".into(),
        ));
    }
    let values = state
        .amplitude()
        .into_iter()
        .zip(&state.phi.values)
        .map(|(a, &p)| a * C64::from_polar(1.0, p / state.hbar))
        .collect();
    WaveField::new(state.grid(), values, state.time, Formulation::ConformalPsi)
}

/// Result of running the limit flow towards `horizon`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LifespanProbe {
    /// Last good time, or `horizon` when no breakdown was seen.
    pub lifespan: f64,
    pub reached_horizon: bool,
}

impl LifespanProbe {
    /// The working horizon `0.8 T`.
    pub fn working_time(&self) -> f64 {
        0.8 * self.lifespan
    }
}

pub fn probe_lifespan(
    a0: &WaveField,
    nl: &Nonlinearity,
    horizon: f64,
    dt: f64,
) -> Result<LifespanProbe> {
    match integrate_limit(a0, nl, horizon, dt, &FlowOptions::default()) {
        Ok(_) => Ok(LifespanProbe {
            lifespan: horizon,
            reached_horizon: true,
        }),
        Err(CascadeError::Lifespan { last_good_time }) => Ok(LifespanProbe {
            lifespan: last_good_time,
            reached_horizon: false,
        }),
        Err(e) => Err(e),
    }
}

/// Like [`probe_lifespan`], but also stops once `a e^{iφ/ħ}` at the smallest
/// `hbar` of interest puts more than `tail_limit` of its spectral energy beyond
/// the 2/3 cutoff; the state is inspected every `check_every` time units.
pub fn probe_resolved_lifespan(
    a0: &WaveField,
    nl: &Nonlinearity,
    horizon: f64,
    dt: f64,
    hbar: f64,
    tail_limit: f64,
    check_every: f64,
) -> Result<LifespanProbe> {
    if !(hbar > 0.0 && check_every > 0.0) {
        return Err(CascadeError::InvalidParams(
            "resolution probe needs hbar > 0 and a positive check interval".into(),
        ));
    }
    let count = (horizon / check_every).floor() as usize;
    let times: Vec<f64> = (1..=count)
        .map(|i| i as f64 * check_every)
        .filter(|&t| t <= horizon)
        .collect();
    let run = match integrate_limit(a0, nl, horizon, dt, &FlowOptions::recording(times)) {
        Ok(run) => run,
        Err(CascadeError::Lifespan { .. }) => {
            let limit = probe_lifespan(a0, nl, horizon, dt)?;
            return probe_resolved_lifespan(
                a0,
                nl,
                limit.lifespan,
                dt,
                hbar,
                tail_limit,
                check_every,
            )
            .map(|p| LifespanProbe {
                reached_horizon: false,
                ..p
            });
        }
        Err(e) => return Err(e),
    };
    let spectral = Spectral::new(a0.grid);
    let mut last_good = 0.0;
    for snap in &run.snapshots {
        let psi = reconstruct_psi(&HydroState {
            hbar,
            ..snap.clone()
        })?;
        if spectral.tail_fraction(&psi.values) > tail_limit {
            return Ok(LifespanProbe {
                lifespan: last_good,
                reached_horizon: false,
            });
        }
        last_good = snap.time;
    }
    Ok(LifespanProbe {
        lifespan: horizon,
        reached_horizon: true,
    })
}

/// Setup of an `ħ → 0` convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    pub hbar_list: Vec<f64>,
    pub k: f64,
    pub sigma: u32,
    pub a0: WaveField,
    /// End of the comparison window `[t₀^ħ, T]`.
    pub t_end: f64,
    pub dt: f64,
    /// Number of comparison intervals in the window.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceRow {
    pub hbar: f64,
    pub s: u32,
    pub sup_error_a: f64,
    pub sup_error_phi: f64,
}

impl ConvergenceRow {
    pub fn total(&self) -> f64 {
        self.sup_error_a + self.sup_error_phi
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceFit {
    pub s: u32,
    pub exponent: f64,
    pub r2: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub fits: Vec<ConvergenceFit>,
    /// `min(1, γ(n-1)/(1-γ))`
    pub predicted_exponent: f64,
    #[serde(rename = "T_used")]
    pub t_used: f64,
}

impl ConvergenceReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("hbar,s,sup_error_a,sup_error_phi\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{},{:.12e},{:.12e}\n",
                r.hbar, r.s, r.sup_error_a, r.sup_error_phi
            ));
        }
        out
    }

    pub fn fit(&self, s: u32) -> Option<&ConvergenceFit> {
        self.fits.iter().find(|f| f.s == s)
    }
}

pub const SOBOLEV_ORDERS: [u32; 3] = [0, 1, 2];

/// Measure `sup_t ‖a^ħ - a‖_{H^s}` and `sup_t ‖φ^ħ - φ‖_{H^s}` over
/// `[t₀^ħ, T]` for each `ħ` (in parallel) and fit the `ħ`-exponents.
pub fn convergence_study(setup: &ConvergenceSetup, nl: &Nonlinearity) -> Result<ConvergenceReport> {
    if setup.hbar_list.len() < 3 || setup.hbar_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(CascadeError::InvalidParams(
            "hbar_list must be decreasing with at least 3 values".into(),
        ));
    }
    if setup.samples == 0 {
        return Err(CascadeError::InvalidParams(
            "need at least one comparison interval".into(),
        ));
    }
    let grid = setup.a0.grid;
    let n = grid.dim();
    let spectral = Spectral::new(grid);
    let per_hbar: Vec<Vec<ConvergenceRow>> = setup
        .hbar_list
        .par_iter()
        .map(|&hbar| -> Result<Vec<ConvergenceRow>> {
            let params = PhysParams::from_hbar(hbar, setup.k, n, setup.sigma)?;
            let start = params.t0;
            if !(start < setup.t_end) {
                return Err(CascadeError::OutOfRange(format!(
                    "t0 = {start} beyond T = {}",
                    setup.t_end
                )));
            }
            let times: Vec<f64> = (0..=setup.samples)
                .map(|j| start + (setup.t_end - start) * j as f64 / setup.samples as f64)
                .collect();
            let opts = FlowOptions::recording(times.clone());
            let exact = integrate_exact(
                &HydroState::from_amplitude(&setup.a0, start, hbar),
                nl,
                setup.t_end,
                setup.dt,
                &opts,
            )?;
            let limit = integrate_limit(&setup.a0, nl, setup.t_end, setup.dt, &opts)?;
            let mut rows: Vec<ConvergenceRow> = SOBOLEV_ORDERS
                .iter()
                .map(|&s| ConvergenceRow {
                    hbar,
                    s,
                    sup_error_a: 0.0,
                    sup_error_phi: 0.0,
                })
                .collect();
            for (e, l) in exact.snapshots.iter().zip(&limit.snapshots) {
                let da: Vec<C64> = e
                    .amplitude()
                    .iter()
                    .zip(l.amplitude())
                    .map(|(x, y)| x - y)
                    .collect();
                let dp: Vec<C64> = e
                    .phi
                    .values
                    .iter()
                    .zip(&l.phi.values)
                    .map(|(x, y)| C64::new(x - y, 0.0))
                    .collect();
                for row in rows.iter_mut() {
                    let s = row.s as f64;
                    row.sup_error_a = row.sup_error_a.max(spectral.sobolev_sq(&da, s).sqrt());
                    row.sup_error_phi = row.sup_error_phi.max(spectral.sobolev_sq(&dp, s).sqrt());
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ConvergenceRow> = per_hbar.into_iter().flatten().collect();
    rows.sort_by(|a, b| b.hbar.total_cmp(&a.hbar).then(a.s.cmp(&b.s)));
    let mut fits = Vec::new();
    for &s in &SOBOLEV_ORDERS {
        let sel: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.s == s).collect();
        let totals: Vec<f64> = sel.iter().map(|r| r.total()).collect();
        let fit: LineFit = power_fit(&sel.iter().map(|r| r.hbar).collect::<Vec<_>>(), &totals)?;
        let monotone = totals.windows(2).all(|w| w[1] < w[0]);
        fits.push(ConvergenceFit {
            s,
            exponent: fit.slope,
            r2: fit.r2,
            monotone,
        });
    }
    let gamma = setup.k / n as f64;
    let predicted_exponent = (gamma * (n as f64 - 1.0) / (1.0 - gamma)).min(1.0);
    Ok(ConvergenceReport {
        rows,
        fits,
        predicted_exponent,
        t_used: setup.t_end,
    })
}

/// One sampled point `(a, b, v)` of the hydrodynamic state space.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PointState {
    pub a: f64,
    pub b: f64,
    pub v: Vec<f64>,
}

/// Sampling scheme for the symmetrizer check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Random {
        seed: u64,
    },
    /// Deterministic lattice, used when randomness is forbidden.
    Lattice,
}

impl Sampling {
    /// `Lattice` when `CASCADE_SEEDLESS=1`, otherwise seeded ChaCha.
    pub fn from_env(seed: u64) -> Self {
        match std::env::var("CASCADE_SEEDLESS") {
            Ok(v) if v == "1" => Sampling::Lattice,
            _ => Sampling::Random { seed },
        }
    }
}

/// `count` states with `|a|, |b| ≤ amp_max`, `|v_j| ≤ 1`, each paired with
/// a unit direction `ξ`.
pub fn sample_states(
    count: usize,
    n_dim: usize,
    amp_max: f64,
    sampling: Sampling,
) -> Vec<(PointState, Vec<f64>)> {
    match sampling {
        Sampling::Random { seed } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let state = PointState {
                        a: rng.gen_range(-amp_max..amp_max),
                        b: rng.gen_range(-amp_max..amp_max),
                        v: (0..n_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    };
                    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    (state, unit_direction(n_dim, angle))
                })
                .collect()
        }
        Sampling::Lattice => (0..count)
            .map(|i| {
                let u = (i as f64 + 0.5) / count as f64;
                let frac = |m: f64| (u * m).fract() * 2.0 - 1.0;
                let state = PointState {
                    a: amp_max * frac(1.0),
                    b: amp_max * frac(7.0),
                    v: (0..n_dim).map(|j| frac(13.0 + 4.0 * j as f64)).collect(),
                };
                (
                    state,
                    unit_direction(n_dim, std::f64::consts::TAU * (u * 3.0).fract()),
                )
            })
            .collect(),
    }
}

fn unit_direction(n_dim: usize, angle: f64) -> Vec<f64> {
    match n_dim {
        1 => vec![if angle < std::f64::consts::PI {
            1.0
        } else {
            -1.0
        }],
        _ => {
            let mut xi = vec![0.0; n_dim];
            xi[0] = angle.cos();
            xi[1] = angle.sin();
            xi
        }
    }
}

/// `A(u, ξ)` for the real system in the unknowns `(a, b, v_1..v_n)` at
/// coefficient time `time` (already shifted by `t₀`).
pub fn principal_symbol(u: &PointState, xi: &[f64], time: f64, nl: &Nonlinearity) -> Vec<Vec<f64>> {
    let n = xi.len();
    let stiff = nl.conformal_stiffness(time, n, u.a * u.a + u.b * u.b);
    let vxi: f64 = u.v.iter().zip(xi).map(|(v, x)| v * x).sum();
    let mut m = vec![vec![0.0; n + 2]; n + 2];
    m[0][0] = vxi;
    m[1][1] = vxi;
    for j in 0..n {
        m[0][2 + j] = 0.5 * u.a * xi[j];
        m[1][2 + j] = 0.5 * u.b * xi[j];
        m[2 + j][0] = 2.0 * stiff * u.a * xi[j];
        m[2 + j][1] = 2.0 * stiff * u.b * xi[j];
        m[2 + j][2 + j] = vxi;
    }
    m
}

/// Diagonal of the symmetrizer `diag(1, 1, 1/(4 c f'), …)` with
/// `c f' = t^{n-2} f'(t^n |a|²)`.
pub fn symmetrizer_diagonal(
    u: &PointState,
    n_dim: usize,
    time: f64,
    nl: &Nonlinearity,
) -> Vec<f64> {
    let stiff = nl.conformal_stiffness(time, n_dim, u.a * u.a + u.b * u.b);
    let mut d = vec![1.0, 1.0];
    d.extend(std::iter::repeat_n(1.0 / (4.0 * stiff), n_dim));
    d
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SymmetrizerReport {
    pub samples: usize,
    /// Largest `max |SA - (SA)ᵀ|` entry over the samples.
    pub max_symmetry_defect: f64,
    /// Smallest eigenvalue of `S` over the samples.
    pub min_eigenvalue: f64,
    /// Largest deviation of the smallest eigenvalue from `min(1, 1/(4 c f'))`.
    pub eigenvalue_formula_error: f64,
    /// `|⟨S L w, w⟩| / (‖S L w‖ ‖w‖)` for random grid fields `w`.
    pub skew_defect: f64,
    pub positivity_violations: usize,
}

impl SymmetrizerReport {
    pub fn passed(&self) -> bool {
        self.max_symmetry_defect < 1e-12
            && self.min_eigenvalue > 0.0
            && self.positivity_violations == 0
            && self.skew_defect < 1e-10
    }
}

/// Assemble `S` and `A(u, ξ)` on each sample and test the symmetry of `SA`,
/// positivity of `S`, and skew-symmetry of `SL` on grid fields.
pub fn symmetrizer_check(
    states: &[(PointState, Vec<f64>)],
    time: f64,
    nl: &Nonlinearity,
    grid: GridSpec,
    sampling: Sampling,
) -> Result<SymmetrizerReport> {
    let mut max_symmetry_defect = 0.0_f64;
    let mut min_eigenvalue = f64::INFINITY;
    let mut eigenvalue_formula_error = 0.0_f64;
    let mut positivity_violations = 0usize;
    for (u, xi) in states {
        let n = xi.len();
        let stiff = nl.conformal_stiffness(time, n, u.a * u.a + u.b * u.b);
        if !(stiff > 0.0) {
            positivity_violations += 1;
            continue;
        }
        let a = principal_symbol(u, xi, time, nl);
        let s = symmetrizer_diagonal(u, n, time, nl);
        for i in 0..n + 2 {
            for j in 0..n + 2 {
                max_symmetry_defect =
                    max_symmetry_defect.max((s[i] * a[i][j] - s[j] * a[j][i]).abs());
            }
        }
        let smallest = s.iter().copied().fold(f64::INFINITY, f64::min);
        min_eigenvalue = min_eigenvalue.min(smallest);
        eigenvalue_formula_error =
            eigenvalue_formula_error.max((smallest - 1f64.min(1.0 / (4.0 * stiff))).abs());
    }
    let skew_defect = skew_defect(grid, sampling);
    Ok(SymmetrizerReport {
        samples: states.len(),
        max_symmetry_defect,
        min_eigenvalue,
        eigenvalue_formula_error,
        skew_defect,
        positivity_violations,
    })
}

/// `L(a, b) = (-Δb, Δa)`; `S` is the identity on that block, so `SL = L`.
fn skew_defect(grid: GridSpec, sampling: Sampling) -> f64 {
    let spectral = Spectral::new(grid);
    let m = grid.len();
    let (a, b): (Vec<f64>, Vec<f64>) = match sampling {
        Sampling::Random { seed } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            (0..m)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .unzip()
        }
        Sampling::Lattice => (0..m)
            .map(|i| {
                let p = grid.position(i);
                (
                    (p[0] + 0.3 * p[1]).sin() * (-0.1 * (p[0] * p[0] + p[1] * p[1])).exp(),
                    (1.7 * p[0] * p[1]).cos() * 0.5,
                )
            })
            .unzip(),
    };
    let lap = |w: &[f64]| -> Vec<f64> {
        let c: Vec<C64> = w.iter().map(|&s| C64::new(s, 0.0)).collect();
        spectral.laplacian(&c).into_iter().map(|z| z.re).collect()
    };
    let (lap_a, lap_b) = (lap(&a), lap(&b));
    let mut inner = 0.0;
    let mut lw = 0.0;
    let mut w = 0.0;
    for i in 0..m {
        let (la, lb) = (-lap_b[i], lap_a[i]);
        inner += la * a[i] + lb * b[i];
        lw += la * la + lb * lb;
        w += a[i] * a[i] + b[i] * b[i];
    }
    inner.abs() / (lw.sqrt() * w.sqrt())
}
