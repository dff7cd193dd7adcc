//! The lens transform `u ↦ ψ` and the focal rescaling `u ↦ φ`, both realised
//! as relabelings of the grid (spacing divided by the dilation factor) plus an
//! analytic Jacobian and chirp, so that they are unitary on the discrete level.

use num_complex::Complex64 as C64;

use crate::error::{CascadeError, Result};
use crate::fit::richardson_error;
use crate::grid::{
    norm, resample_onto, spectral_gradient, Formulation, GridSpec, NormKind, WaveField,
};
use crate::model::{energy, Nonlinearity, PhysParams};
use crate::solver::{evolve, initial_data, EvolutionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapDirection {
    PhysicalToConformal,
    ConformalToPhysical,
    PhysicalToRescaled,
    RescaledToPhysical,
}

/// One instance of a frame change at a fixed physical time.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FrameMap {
    pub direction: MapDirection,
    pub params: PhysParams,
    pub t_physical: f64,
    /// Spatial dilation factor: `1-t` for the lens transform, `ε^γ` for the rescaling.
    pub scale: f64,
    /// Time coordinate in the target (or source) frame.
    pub frame_time: f64,
}

impl FrameMap {
    pub fn new(direction: MapDirection, params: &PhysParams, t_physical: f64) -> Result<Self> {
        if !(t_physical < 1.0)
            && matches!(
                direction,
                MapDirection::PhysicalToConformal | MapDirection::ConformalToPhysical
            )
        {
            return Err(CascadeError::OutOfRange(format!(
                "lens transform needs t < 1, got {t_physical}"
            )));
        }
        let (scale, frame_time) = match direction {
            MapDirection::PhysicalToConformal | MapDirection::ConformalToPhysical => {
                (1.0 - t_physical, params.t0 / (1.0 - t_physical))
            }
            MapDirection::PhysicalToRescaled | MapDirection::RescaledToPhysical => {
                (params.t0, (t_physical - 1.0) / params.t0)
            }
        };
        Ok(Self {
            direction,
            params: *params,
            t_physical,
            scale,
            frame_time,
        })
    }

    /// Amplitude factor `(1-t)^{-n/2}` of the lens transform.
    pub fn amplitude_factor(&self) -> f64 {
        self.scale.powf(-(self.params.n_dim as f64) / 2.0)
    }

    /// Semiclassical constant of the transformed equation, read off from the
    /// ratio of the dilated Laplacian to the reparametrised time derivative.
    pub fn transformed_semiclassical(&self) -> f64 {
        let eps = self.params.eps;
        match self.direction {
            MapDirection::PhysicalToConformal | MapDirection::ConformalToPhysical => {
                let dtau_dt = self.params.t0 / (self.scale * self.scale);
                eps / (self.scale * self.scale) / dtau_dt
            }
            _ => eps / (self.scale * self.scale) / (1.0 / self.scale),
        }
    }

    pub fn apply(&self, field: &WaveField) -> Result<WaveField> {
        match self.direction {
            MapDirection::PhysicalToConformal => to_conformal(field, &self.params, self.t_physical),
            MapDirection::ConformalToPhysical => from_conformal(field, &self.params),
            MapDirection::PhysicalToRescaled => to_rescaled(field, &self.params, self.t_physical),
            MapDirection::RescaledToPhysical => from_rescaled(field, &self.params),
        }
    }
}

fn expect(field: &WaveField, tag: Formulation) -> Result<()> {
    if field.formulation != tag {
        return Err(CascadeError::WrongFormulation {
            expected: tag,
            found: field.formulation,
        });
    }
    Ok(())
}

fn check_time(field: &WaveField, t: f64) -> Result<()> {
    if (field.time - t).abs() > 1e-12 * t.abs().max(1.0) {
        return Err(CascadeError::InvalidParams(format!(
            "field stamped at t = {} but transform requested at t = {t}",
            field.time
        )));
    }
    Ok(())
}

/// Multiply by `amp · e^{i c |x|²}` (positions of `grid`) and relabel onto `target`.
fn relabel(
    field: &WaveField,
    target: GridSpec,
    amp: f64,
    chirp: f64,
    time: f64,
    tag: Formulation,
) -> WaveField {
    let r2 = field.grid.radius_sq();
    let values = field
        .values
        .iter()
        .zip(r2)
        .map(|(v, r)| v * amp * C64::from_polar(1.0, chirp * r))
        .collect();
    WaveField {
        grid: target,
        values,
        time,
        formulation: tag,
    }
}

/// `ψ(τ, ξ) = (1-t)^{n/2} u(t, (1-t)ξ) e^{-i|x|²/(2ε(t-1))}` at `τ = ε^γ/(1-t)`.
pub fn to_conformal(u: &WaveField, params: &PhysParams, t: f64) -> Result<WaveField> {
    expect(u, Formulation::PhysicalU)?;
    check_time(u, t)?;
    if !(t < 1.0) {
        return Err(CascadeError::OutOfRange(format!(
            "lens transform needs t < 1, got {t}"
        )));
    }
    let shrink = 1.0 - t;
    let n = u.grid.dim() as f64;
    let target = u.grid.scaled(1.0 / shrink)?;
    let chirp = -1.0 / (2.0 * params.eps * (t - 1.0));
    Ok(relabel(
        u,
        target,
        shrink.powf(n / 2.0),
        chirp,
        params.t0 / shrink,
        Formulation::ConformalPsi,
    ))
}

pub fn from_conformal(psi: &WaveField, params: &PhysParams) -> Result<WaveField> {
    expect(psi, Formulation::ConformalPsi)?;
    let tau = psi.time;
    if !(tau > 0.0) {
        return Err(CascadeError::OutOfRange(format!(
            "conformal time {tau} must be positive"
        )));
    }
    let shrink = params.t0 / tau;
    let t = 1.0 - shrink;
    let n = psi.grid.dim() as f64;
    let target = psi.grid.scaled(shrink)?;
    // The chirp depends on the physical position x = (1-t)ξ.
    let chirp = shrink * shrink / (2.0 * params.eps * (t - 1.0));
    Ok(relabel(
        psi,
        target,
        shrink.powf(-n / 2.0),
        chirp,
        t,
        Formulation::PhysicalU,
    ))
}

/// `φ(s, y) = ε^{k/2} u(t, ε^γ y)` at `s = (t-1)/ε^γ`.
pub fn to_rescaled(u: &WaveField, params: &PhysParams, t: f64) -> Result<WaveField> {
    expect(u, Formulation::PhysicalU)?;
    check_time(u, t)?;
    let scale = params.t0;
    let n = u.grid.dim() as f64;
    let target = u.grid.scaled(1.0 / scale)?;
    Ok(relabel(
        u,
        target,
        scale.powf(n / 2.0),
        0.0,
        (t - 1.0) / scale,
        Formulation::RescaledPhi,
    ))
}

pub fn from_rescaled(phi: &WaveField, params: &PhysParams) -> Result<WaveField> {
    expect(phi, Formulation::RescaledPhi)?;
    let scale = params.t0;
    let n = phi.grid.dim() as f64;
    let target = phi.grid.scaled(scale)?;
    Ok(relabel(
        phi,
        target,
        scale.powf(-n / 2.0),
        0.0,
        1.0 + scale * phi.time,
        Formulation::PhysicalU,
    ))
}

/// `φ(s, y) = (-1/s)^{n/2} ψ(-1/s, -y/s) e^{i|y|²/(2ħs)}`, the direct passage
/// from the conformal to the rescaled frame.
pub fn conformal_to_rescaled(psi: &WaveField, params: &PhysParams) -> Result<WaveField> {
    expect(psi, Formulation::ConformalPsi)?;
    let tau = psi.time;
    if !(tau > 0.0) {
        return Err(CascadeError::OutOfRange(format!(
            "conformal time {tau} must be positive"
        )));
    }
    let s = -1.0 / tau;
    let n = psi.grid.dim() as f64;
    let target = psi.grid.scaled(1.0 / tau)?;
    // |y|² = |ξ|²/τ², so the chirp coefficient on ξ-positions is 1/(2ħ s τ²).
    let chirp = 1.0 / (2.0 * params.hbar * s * tau * tau);
    Ok(relabel(
        psi,
        target,
        tau.powf(n / 2.0),
        chirp,
        s,
        Formulation::RescaledPhi,
    ))
}

/// Physical energy `½‖ε∇u‖² + ε^{-k}∫F(ε^{k/2}|u|)` of the field whose lens
/// image is `psi`: `½‖ħτ∇ψ - iξψ‖² + τ^{-n}∫F(τ^{n/2}|ψ|)`.
pub fn physical_energy_from_conformal(
    psi: &WaveField,
    params: &PhysParams,
    nl: &Nonlinearity,
) -> Result<f64> {
    expect(psi, Formulation::ConformalPsi)?;
    let tau = psi.time;
    let grad = spectral_gradient(psi);
    let c = params.hbar * tau;
    let dv = psi.grid.cell_volume();
    let mut kinetic = 0.0;
    for i in 0..psi.values.len() {
        let pos = psi.grid.position(i);
        for (axis, g) in grad.iter().enumerate() {
            let w = c * g.values[i] - C64::new(0.0, pos[axis]) * psi.values[i];
            kinetic += w.norm_sqr();
        }
    }
    let n = params.n_dim as f64;
    let amp = tau.powf(n / 2.0);
    let potential: f64 = 2.0
        * psi
            .values
            .iter()
            .map(|v| nl.antideriv(amp * v.norm()))
            .sum::<f64>()
        / tau.powf(n);
    Ok(0.5 * kinetic * dv + potential * dv)
}

/// Physical energy of the field whose rescaled image is `phi`:
/// `½ħ²‖∇φ‖² + 2∫F(|φ|)`.
pub fn physical_energy_from_rescaled(
    phi: &WaveField,
    params: &PhysParams,
    nl: &Nonlinearity,
) -> Result<f64> {
    expect(phi, Formulation::RescaledPhi)?;
    let kinetic: f64 = spectral_gradient(phi)
        .iter()
        .map(|g| norm(g, NormKind::L2).map(|v| v * v))
        .sum::<Result<f64>>()?;
    let potential: f64 = 2.0
        * phi
            .values
            .iter()
            .map(|v| nl.antideriv(v.norm()))
            .sum::<f64>()
        * phi.grid.cell_volume();
    Ok(0.5 * params.hbar * params.hbar * kinetic + potential)
}

/// Physical energy of a field in any of the three frames.
pub fn frame_energy(field: &WaveField, params: &PhysParams, nl: &Nonlinearity) -> Result<f64> {
    match field.formulation {
        Formulation::PhysicalU => energy(field, params, nl),
        Formulation::ConformalPsi => physical_energy_from_conformal(field, params, nl),
        Formulation::RescaledPhi => physical_energy_from_rescaled(field, params, nl),
        Formulation::Auxiliary => Err(CascadeError::WrongFormulation {
            expected: Formulation::PhysicalU,
            found: Formulation::Auxiliary,
        }),
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CrossCheckReport {
    pub t_check: f64,
    pub conformal_time: f64,
    /// `L²` distance between the two routes at the finest step, in the lens frame.
    pub discrepancy: f64,
    /// Discrepancy at the coarse step.
    pub discrepancy_coarse: f64,
    pub richardson_physical: f64,
    pub richardson_conformal: f64,
    /// Combined bound at the coarse level (from steps `dt` and `dt/2`).
    pub bound_coarse: f64,
    /// Combined bound at the fine level (from `dt/2` and `dt/4`).
    pub bound: f64,
    pub passed: bool,
}

impl CrossCheckReport {
    /// Ratio of the successive Richardson bounds; near 4 for a second-order scheme.
    pub fn bound_ratio(&self) -> f64 {
        self.bound_coarse / self.bound
    }
}

/// Setup of a frame cross-check: physical grid and step, conformal grid and step.
#[derive(Debug, Clone, Copy)]
pub struct CrossCheckSetup {
    pub physical_grid: GridSpec,
    pub conformal_grid: GridSpec,
    pub dt_physical: f64,
    pub dt_conformal: f64,
}

/// Solve the physical equation up to `t_check` and the conformal equation up
/// to `ε^γ/(1-t_check)`, each at steps `dt`, `dt/2`, `dt/4`, and compare them
/// in the lens frame (physical result relabelled, then spectrally resampled
/// onto the conformal grid).
pub fn cross_check_formulations(
    params: &PhysParams,
    nl: &Nonlinearity,
    a0: &(dyn Fn(&[f64]) -> C64 + Sync),
    t_check: f64,
    setup: CrossCheckSetup,
) -> Result<CrossCheckReport> {
    if !(t_check < 1.0 - params.t0 / 2.0) {
        return Err(CascadeError::OutOfRange(format!(
            "t_check = {t_check} beyond 1 - ε^γ/2"
        )));
    }
    let tau = params.conformal_time(t_check);
    let u0 = initial_data(params, a0, setup.physical_grid, Formulation::PhysicalU)?;
    let psi0 = initial_data(params, a0, setup.conformal_grid, Formulation::ConformalPsi)?;
    let run =
        |form: Formulation, init: &WaveField, t0: f64, t1: f64, dt: f64| -> Result<WaveField> {
            let spec =
                EvolutionSpec::new(form, *params, nl.clone(), t0, t1, dt).without_boundary_check();
            Ok(evolve(&spec, init)?.final_state)
        };
    let mut phys = Vec::new();
    let mut conf = Vec::new();
    for level in 0..3 {
        let f = 0.5f64.powi(level);
        let u = run(
            Formulation::PhysicalU,
            &u0,
            0.0,
            t_check,
            setup.dt_physical * f,
        )?;
        let mapped = to_conformal(&u, params, t_check)?;
        let on_conf = resample_onto(&mapped, &setup.conformal_grid)?;
        phys.push(WaveField {
            grid: setup.conformal_grid,
            values: on_conf,
            ..mapped
        });
        conf.push(run(
            Formulation::ConformalPsi,
            &psi0,
            params.t0,
            tau,
            setup.dt_conformal * f,
        )?);
    }
    let r_phys = |a: usize| {
        phys[a]
            .l2_distance(&phys[a + 1])
            .map(|d| richardson_error(d, 2))
    };
    let r_conf = |a: usize| {
        conf[a]
            .l2_distance(&conf[a + 1])
            .map(|d| richardson_error(d, 2))
    };
    let bound_coarse = r_phys(0)? + r_conf(0)?;
    let richardson_physical = r_phys(1)?;
    let richardson_conformal = r_conf(1)?;
    let bound = richardson_physical + richardson_conformal;
    let discrepancy = phys[2].l2_distance(&conf[2])?;
    let discrepancy_coarse = phys[1].l2_distance(&conf[1])?;
    Ok(CrossCheckReport {
        t_check,
        conformal_time: tau,
        discrepancy,
        discrepancy_coarse,
        richardson_physical,
        richardson_conformal,
        bound_coarse,
        bound,
        passed: discrepancy <= 2.0 * bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample;
    use crate::model::make_params;
    use proptest::prelude::*;

    fn random_field(grid: GridSpec, seed: u64, time: f64, tag: Formulation) -> WaveField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        WaveField {
            grid,
            values,
            time,
            formulation: tag,
        }
    }

    #[test]
    fn time_zero_removes_chirp() {
        let p = make_params(0.01, 1.5, 2, 1).unwrap();
        let g = GridSpec::new(2, 64, 8.0).unwrap();
        let a0 = crate::model::unit_gaussian();
        let u = initial_data(&p, &*a0, g, Formulation::PhysicalU).unwrap();
        let psi = to_conformal(&u, &p, 0.0).unwrap();
        assert!(psi.grid.same_as(&g));
        assert_eq!(psi.time, p.t0);
        let plain = sample(g, &*a0).unwrap();
        let err = psi
            .values
            .iter()
            .zip(&plain.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn round_trips_and_unitarity() {
        // Moderate chirp phases keep the round trip at the 1e-12 level.
        let p = make_params(0.05, 1.5, 2, 1).unwrap();
        let g = GridSpec::new(2, 32, 3.0).unwrap();
        for (seed, t) in [(1u64, 0.3), (2, 0.9), (3, 1.0 - 2.0 * p.t0)] {
            let u = random_field(g, seed, t, Formulation::PhysicalU);
            let psi = to_conformal(&u, &p, t).unwrap();
            assert!((psi.mass() - u.mass()).abs() <= 1e-12 * u.mass());
            let back = from_conformal(&psi, &p).unwrap();
            assert!(back.grid.same_as(&g));
            assert!((back.time - t).abs() < 1e-12);
            let err = back
                .values
                .iter()
                .zip(&u.values)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
            let phi = to_rescaled(&u, &p, t).unwrap();
            assert!((phi.mass() - u.mass()).abs() <= 1e-12 * u.mass());
            let back = from_rescaled(&phi, &p).unwrap();
            let err = back
                .values
                .iter()
                .zip(&u.values)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn degenerate_rescaling_is_a_time_shift() {
        let p = crate::model::make_params(1.0, 1.5, 2, 1).unwrap();
        let g = GridSpec::new(1, 16, 2.0).unwrap();
        let u = random_field(g, 9, 0.4, Formulation::PhysicalU);
        let phi = to_rescaled(&u, &p, 0.4).unwrap();
        assert_eq!(phi.values, u.values);
        assert!((phi.time + 0.6).abs() < 1e-15);
    }

    #[test]
    fn rescaling_factors_through_the_conformal_frame() {
        let p = make_params(1e-2, 1.5, 2, 1).unwrap();
        let g = GridSpec::new(2, 32, 4.0).unwrap();
        let t = 1.0 - 2.0 * p.t0;
        let u = random_field(g, 4, t, Formulation::PhysicalU);
        let direct = to_rescaled(&u, &p, t).unwrap();
        let via = conformal_to_rescaled(&to_conformal(&u, &p, t).unwrap(), &p).unwrap();
        assert!(direct.grid.same_as(&via.grid));
        assert!((direct.time - via.time).abs() < 1e-12);
        let err = direct
            .values
            .iter()
            .zip(&via.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn frame_map_metadata() {
        let p = make_params(1e-3, 1.5, 2, 1).unwrap();
        let m = FrameMap::new(MapDirection::PhysicalToConformal, &p, 0.5).unwrap();
        assert!((m.frame_time - p.t0 / 0.5).abs() < 1e-15);
        assert!((m.amplitude_factor() - 2.0).abs() < 1e-15);
        assert!((m.transformed_semiclassical() - p.hbar).abs() <= 1e-14 * p.hbar);
        let r = FrameMap::new(MapDirection::PhysicalToRescaled, &p, 0.5).unwrap();
        assert!((r.transformed_semiclassical() - p.hbar).abs() <= 1e-14 * p.hbar);
        assert!(FrameMap::new(MapDirection::PhysicalToConformal, &p, 1.0).is_err());
        let mut prev = 0.0;
        for i in 0..1000 {
            let tau = p.conformal_time(i as f64 / 1000.0);
            assert!(tau > prev);
            prev = tau;
        }
    }

    #[test]
    fn energy_agrees_across_frames() {
        let p = make_params(0.2, 1.5, 2, 1).unwrap();
        let g = GridSpec::new(2, 256, 10.0).unwrap();
        let nl = Nonlinearity::cubic();
        let u = initial_data(
            &p,
            &*crate::model::unit_gaussian(),
            g,
            Formulation::PhysicalU,
        )
        .unwrap();
        let e = energy(&u, &p, &nl).unwrap();
        let ec =
            physical_energy_from_conformal(&to_conformal(&u, &p, 0.0).unwrap(), &p, &nl).unwrap();
        let er =
            physical_energy_from_rescaled(&to_rescaled(&u, &p, 0.0).unwrap(), &p, &nl).unwrap();
        assert!((e - ec).abs() < 1e-10 * e, "{e} {ec}");
        assert!((e - er).abs() < 1e-10 * e, "{e} {er}");
    }

    #[test]
    fn linear_cross_check_is_exact() {
        let p = make_params(0.1, 1.5, 2, 1).unwrap();
        let setup = CrossCheckSetup {
            physical_grid: GridSpec::new(2, 512, 7.0).unwrap(),
            conformal_grid: GridSpec::new(2, 64, 8.0).unwrap(),
            dt_physical: 0.1,
            dt_conformal: 0.5,
        };
        let r = cross_check_formulations(
            &p,
            &Nonlinearity::zero(),
            &*crate::model::unit_gaussian(),
            0.5,
            setup,
        )
        .unwrap();
        assert!(r.discrepancy < 1e-9, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn unitarity_on_random_fields(seed in any::<u64>(), t in 0.0..0.999f64, two_d in any::<bool>()) {
            let p = make_params(1e-3, 1.5, 2, 1).unwrap();
            let g = GridSpec::new(if two_d { 2 } else { 1 }, 32, 3.0).unwrap();
            let u = random_field(g, seed, t, Formulation::PhysicalU);
            let m = u.mass();
            prop_assert!((to_conformal(&u, &p, t).unwrap().mass() - m).abs() <= 1e-12 * m);
            prop_assert!((to_rescaled(&u, &p, t).unwrap().mass() - m).abs() <= 1e-12 * m);
        }
    }
}
