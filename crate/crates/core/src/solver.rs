//! Strang split-step Fourier integration of the three equivalent forms of the
//! problem: the physical equation in `u`, the conformal equation in `ψ` (with
//! the time-dependent coefficient `τ^{-2} f(τ^n ·)`), and the rescaled equation
//! in `φ`.

use num_complex::Complex64 as C64;

use crate::conformal::{frame_energy, to_rescaled};
use crate::error::{CascadeError, Result};
use crate::grid::{Formulation, GridSpec, Spectral, WaveField};
use crate::model::{Nonlinearity, PhysParams};

/// Sup norm beyond which a run is treated as blowing up.
pub const BLOWUP_SUP: f64 = 1e6;
/// Largest modulus tolerated on the boundary layer of the box.
pub const BOX_DECAY_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EvolutionSpec {
    pub formulation: Formulation,
    pub params: PhysParams,
    pub nl: Nonlinearity,
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub record_times: Vec<f64>,
    /// Abort with [`CascadeError::BoxDecay`] when a recorded snapshot has a
    /// boundary modulus above this value. `None` disables the check.
    pub boundary_limit: Option<f64>,
}

impl EvolutionSpec {
    pub fn new(
        formulation: Formulation,
        params: PhysParams,
        nl: Nonlinearity,
        t_start: f64,
        t_end: f64,
        dt: f64,
    ) -> Self {
        Self {
            formulation,
            params,
            nl,
            t_start,
            t_end,
            dt,
            record_times: vec![t_end],
            boundary_limit: Some(BOX_DECAY_LIMIT),
        }
    }

    pub fn recording(mut self, times: Vec<f64>) -> Self {
        self.record_times = times;
        self
    }

    pub fn without_boundary_check(mut self) -> Self {
        self.boundary_limit = None;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(CascadeError::InvalidParams(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if !(self.t_start < self.t_end) {
            return Err(CascadeError::InvalidParams(format!(
                "t_start = {} must precede t_end = {}",
                self.t_start, self.t_end
            )));
        }
        if self.formulation == Formulation::Auxiliary {
            return Err(CascadeError::InvalidParams(
                "auxiliary fields cannot be evolved".into(),
            ));
        }
        let tol = 1e-12 * self.t_end.abs().max(1.0);
        let mut prev = f64::NEG_INFINITY;
        for &t in &self.record_times {
            if t < self.t_start - tol || t > self.t_end + tol || t < prev {
                return Err(CascadeError::InvalidParams(format!(
                    "record time {t} outside [{}, {}] or unsorted",
                    self.t_start, self.t_end
                )));
            }
            prev = t;
        }
        if self.formulation == Formulation::ConformalPsi
            && self.params.n_dim == 1
            && self.t_start <= 0.0
        {
            return Err(CascadeError::InvalidParams(
                "conformal runs with n = 1 must start at t > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Diagnostics {
    pub t: f64,
    /// Squared `L²` norm.
    pub mass: f64,
    /// Energy of the physical problem, evaluated in whichever frame the run uses.
    pub energy: f64,
    pub sup_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<WaveField>,
    pub diagnostics: Vec<Diagnostics>,
    /// State at `t_end`.
    pub final_state: WaveField,
    pub steps: usize,
}

/// Initial datum of the requested formulation: `a₀ e^{-i|x|²/2ε}` at `t = 0`
/// for the physical frame, `a₀` at `τ = ε^γ` for the conformal frame, and the
/// rescaled image of the physical datum otherwise.
pub fn initial_data(
    params: &PhysParams,
    a0: &(dyn Fn(&[f64]) -> C64 + Sync),
    grid: GridSpec,
    formulation: Formulation,
) -> Result<WaveField> {
    let mut field = crate::grid::sample(grid, a0)?;
    let boundary = field.boundary_max();
    if boundary > BOX_DECAY_LIMIT {
        return Err(CascadeError::BoxDecay {
            boundary,
            limit: BOX_DECAY_LIMIT,
        });
    }
    match formulation {
        Formulation::PhysicalU | Formulation::RescaledPhi => {
            let r2 = grid.radius_sq();
            for (v, r) in field.values.iter_mut().zip(r2) {
                *v *= C64::from_polar(1.0, -r / (2.0 * params.eps));
            }
            field.formulation = Formulation::PhysicalU;
            if formulation == Formulation::RescaledPhi {
                return to_rescaled(&field, params, 0.0);
            }
        }
        Formulation::ConformalPsi => {
            field.time = params.t0;
            field.formulation = Formulation::ConformalPsi;
        }
        Formulation::Auxiliary => {}
    }
    Ok(field)
}

/// Step sizes `min(c₁ h²/s, c₂ horizon)` with `c₁ = 0.5`, `c₂ = 0.01`, where
/// `s` is the semiclassical constant of the equation and `horizon` the
/// remaining distance to the focal time.
pub fn suggest_dt(spacing: f64, semiclassical: f64, horizon: f64) -> f64 {
    (0.5 * spacing * spacing / semiclassical).min(0.01 * horizon)
}

/// Semiclassical constant multiplying `∂_t` and `Δ` in each formulation.
pub fn semiclassical_constant(params: &PhysParams, formulation: Formulation) -> f64 {
    match formulation {
        Formulation::PhysicalU => params.eps,
        _ => params.hbar,
    }
}

/// Precomputed split-step machinery for one grid and formulation.
#[derive(Debug, Clone)]
pub struct Stepper {
    spectral: Spectral,
    formulation: Formulation,
    params: PhysParams,
    nl: Nonlinearity,
    semiclassical: f64,
}

impl Stepper {
    pub fn new(
        grid: GridSpec,
        formulation: Formulation,
        params: PhysParams,
        nl: Nonlinearity,
    ) -> Self {
        let semiclassical = semiclassical_constant(&params, formulation);
        Self {
            spectral: Spectral::new(grid),
            formulation,
            params,
            nl,
            semiclassical,
        }
    }

    /// Potential `V` with `i s ∂_t w = -(s²/2) Δw + V(t, |w|²) w`.
    fn potential(&self, t: f64, y: f64) -> f64 {
        match self.formulation {
            Formulation::PhysicalU => self.nl.f(self.params.eps.powf(self.params.k) * y),
            Formulation::ConformalPsi => self.nl.conformal_potential(t, self.params.n_dim, y),
            _ => self.nl.f(y),
        }
    }

    fn nonlinear(&self, values: &mut [C64], t_mid: f64, dt: f64) {
        if self.nl.is_zero() {
            return;
        }
        let scale = -dt / self.semiclassical;
        for v in values.iter_mut() {
            *v *= C64::from_polar(1.0, scale * self.potential(t_mid, v.norm_sqr()));
        }
    }

    fn kinetic(&self, values: &mut [C64], dt: f64) {
        let c = -0.5 * self.semiclassical * dt;
        self.spectral.forward(values);
        for (v, k2) in values.iter_mut().zip(self.spectral.k_sq()) {
            *v *= C64::from_polar(1.0, c * k2);
        }
        self.spectral.inverse(values);
    }

    /// One Strang step from `t` to `t + dt`; `dt` may be negative.
    pub fn step(&self, values: &mut [C64], t: f64, dt: f64) {
        self.nonlinear(values, t + 0.25 * dt, 0.5 * dt);
        self.kinetic(values, dt);
        self.nonlinear(values, t + 0.75 * dt, 0.5 * dt);
    }
}

/// Single Strang step of `field` (negative `dt` runs backwards).
pub fn strang_step(field: &mut WaveField, params: &PhysParams, nl: &Nonlinearity, dt: f64) {
    let stepper = Stepper::new(field.grid, field.formulation, *params, nl.clone());
    stepper.step(&mut field.values, field.time, dt);
    field.time += dt;
}

pub fn evolve(spec: &EvolutionSpec, init: &WaveField) -> Result<Trajectory> {
    spec.validate()?;
    if init.formulation != spec.formulation {
        return Err(CascadeError::WrongFormulation {
            expected: spec.formulation,
            found: init.formulation,
        });
    }
    let tol = 1e-12 * spec.t_start.abs().max(1.0);
    if (init.time - spec.t_start).abs() > tol {
        return Err(CascadeError::InvalidParams(format!(
            "initial time stamp {} differs from t_start {}",
            init.time, spec.t_start
        )));
    }
    let stepper = Stepper::new(init.grid, spec.formulation, spec.params, spec.nl.clone());
    let mut values = init.values.clone();
    let mut t = spec.t_start;
    let mut steps = 0usize;
    let mut snapshots = Vec::with_capacity(spec.record_times.len());
    let mut diagnostics = Vec::with_capacity(spec.record_times.len());

    let mut targets = spec.record_times.clone();
    targets.push(spec.t_end);
    for (i, &target) in targets.iter().enumerate() {
        let span = target - t;
        if span > 0.0 {
            let n = (span / spec.dt).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for j in 0..n {
                let t_now = t + j as f64 * h;
                stepper.step(&mut values, t_now, h);
                steps += 1;
                let mut sup = 0.0_f64;
                for v in &values {
                    if !(v.re.is_finite() && v.im.is_finite()) {
                        return Err(CascadeError::SolverAbort {
                            step: steps,
                            time: t_now + h,
                            reason: "non-finite value".into(),
                        });
                    }
                    sup = sup.max(v.norm_sqr());
                }
                let sup = sup.sqrt();
                if sup > BLOWUP_SUP {
                    return Err(CascadeError::BlowupSuspected {
                        step: steps,
                        time: t_now + h,
                        sup,
                    });
                }
            }
            t = target;
        }
        if i < spec.record_times.len() {
            let snap = WaveField {
                grid: init.grid,
                values: values.clone(),
                time: target,
                formulation: spec.formulation,
            };
            if let Some(limit) = spec.boundary_limit {
                let boundary = snap.boundary_max();
                if boundary > limit {
                    return Err(CascadeError::BoxDecay { boundary, limit });
                }
            }
            diagnostics.push(Diagnostics {
                t: target,
                mass: snap.mass(),
                energy: frame_energy(&snap, &spec.params, &spec.nl)?,
                sup_norm: snap.sup_norm(),
            });
            snapshots.push(snap);
        }
    }
    let final_state = WaveField {
        grid: init.grid,
        values,
        time: spec.t_end,
        formulation: spec.formulation,
    };
    Ok(Trajectory {
        snapshots,
        diagnostics,
        final_state,
        steps,
    })
}

/// Diagnostics as CSV text with columns `t,mass,energy,sup_norm`.
pub fn diagnostics_csv(diagnostics: &[Diagnostics]) -> String {
    let mut out = String::from("t,mass,energy,sup_norm\n");
    for d in diagnostics {
        out.push_str(&format!(
            "{:.12e},{:.15e},{:.15e},{:.15e}\n",
            d.t, d.mass, d.energy, d.sup_norm
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::free_propagate;
    use crate::model::{make_params, unit_gaussian};

    fn params() -> PhysParams {
        make_params(0.05, 1.5, 2, 1).unwrap()
    }

    #[test]
    fn initial_data_examples() {
        let p = make_params(1e-2, 1.5, 2, 1).unwrap();
        let g = GridSpec::new(2, 256, 12.0).unwrap();
        let a0 = unit_gaussian();
        let u = initial_data(&p, &*a0, g, Formulation::PhysicalU).unwrap();
        assert_eq!(u.values[128 * 256 + 128], C64::new(1.0, 0.0));
        let plain = crate::grid::sample(g, &*a0).unwrap();
        assert!((u.mass() - plain.mass()).abs() <= 1e-14 * plain.mass());
        assert!((u.mass().sqrt() - std::f64::consts::PI.sqrt()).abs() < 1e-8);
        let psi = initial_data(&p, &*a0, g, Formulation::ConformalPsi).unwrap();
        assert_eq!(psi.time, p.t0);
        assert_eq!(psi.values, plain.values);
        let small = GridSpec::new(2, 64, 3.0).unwrap();
        assert!(matches!(
            initial_data(&p, &*a0, small, Formulation::PhysicalU),
            Err(CascadeError::BoxDecay { .. })
        ));
    }

    #[test]
    fn linear_splitting_is_exact() {
        let p = params();
        let g = GridSpec::new(1, 512, 20.0).unwrap();
        let init = initial_data(&p, &*unit_gaussian(), g, Formulation::PhysicalU).unwrap();
        for dt in [0.1, 0.013] {
            let spec = EvolutionSpec::new(
                Formulation::PhysicalU,
                p,
                Nonlinearity::zero(),
                0.0,
                0.5,
                dt,
            )
            .without_boundary_check();
            let run = evolve(&spec, &init).unwrap();
            let exact = free_propagate(&init, p.eps, 0.5);
            let err = run
                .final_state
                .values
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn time_reversal() {
        let p = params();
        let g = GridSpec::new(2, 64, 8.0).unwrap();
        let a0 = unit_gaussian();
        for form in [Formulation::PhysicalU, Formulation::ConformalPsi] {
            let mut f = initial_data(&p, &*a0, g, form).unwrap();
            let start = f.clone();
            let nl = Nonlinearity::saturated_cubic();
            strang_step(&mut f, &p, &nl, 0.01);
            strang_step(&mut f, &p, &nl, -0.01);
            let err = f
                .values
                .iter()
                .zip(&start.values)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn record_times_and_mass() {
        let p = params();
        let g = GridSpec::new(1, 256, 16.0).unwrap();
        let init = initial_data(&p, &*unit_gaussian(), g, Formulation::ConformalPsi).unwrap();
        let spec = EvolutionSpec::new(
            Formulation::ConformalPsi,
            p,
            Nonlinearity::cubic(),
            p.t0,
            0.4,
            1e-3,
        )
        .recording(vec![p.t0, 0.2, 0.25, 0.4]);
        let run = evolve(&spec, &init).unwrap();
        assert_eq!(run.snapshots.len(), 4);
        assert_eq!(run.snapshots[2].time, 0.25);
        let m0 = run.diagnostics[0].mass;
        for d in &run.diagnostics {
            assert!((d.mass - m0).abs() <= 1e-12 * m0);
        }
        let csv = diagnostics_csv(&run.diagnostics);
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn rejects_bad_specs() {
        let p = params();
        let g = GridSpec::new(1, 64, 16.0).unwrap();
        let init = initial_data(&p, &*unit_gaussian(), g, Formulation::PhysicalU).unwrap();
        let nl = Nonlinearity::cubic();
        let bad_dt = EvolutionSpec::new(Formulation::PhysicalU, p, nl.clone(), 0.0, 0.5, 0.0);
        assert!(evolve(&bad_dt, &init).is_err());
        let bad_rec = EvolutionSpec::new(Formulation::PhysicalU, p, nl.clone(), 0.0, 0.5, 0.1)
            .recording(vec![0.7]);
        assert!(evolve(&bad_rec, &init).is_err());
        let wrong = EvolutionSpec::new(Formulation::ConformalPsi, p, nl, p.t0, 0.5, 0.1);
        assert!(matches!(
            evolve(&wrong, &init),
            Err(CascadeError::WrongFormulation { .. })
        ));
    }

    #[test]
    fn blowup_abort() {
        let p = params();
        let g = GridSpec::new(1, 64, 16.0).unwrap();
        let mut init = initial_data(&p, &*unit_gaussian(), g, Formulation::PhysicalU).unwrap();
        init.values[32] = C64::new(2e6, 0.0);
        let spec = EvolutionSpec::new(
            Formulation::PhysicalU,
            p,
            Nonlinearity::zero(),
            0.0,
            0.1,
            0.05,
        );
        assert!(matches!(
            evolve(&spec, &init),
            Err(CascadeError::BlowupSuspected { step: 1, .. })
        ));
    }
}
