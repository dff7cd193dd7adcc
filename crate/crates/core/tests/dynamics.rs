use cascade_core::cascade::{build_stack, psi_n};
use cascade_core::conformal::{frame_energy, to_conformal};
use cascade_core::grenier::{
    gradient_consistency, integrate_exact, integrate_limit, integrate_velocity, reconstruct_psi,
    FlowOptions, HydroState, VelocityState,
};
use cascade_core::grid::{sample, Formulation, GridSpec};
use cascade_core::model::{energy, make_params, unit_gaussian, Nonlinearity, PhysParams};
use cascade_core::series::{compute_coeffs, phase_shifted, LimitFlow};
use cascade_core::solver::{evolve, initial_data, EvolutionSpec};

fn gaussian_run(
    p: &PhysParams,
    nl: &Nonlinearity,
    grid: GridSpec,
    tau_end: f64,
    dt: f64,
    taus: Vec<f64>,
) -> Vec<cascade_core::grid::WaveField> {
    let init = initial_data(p, &*unit_gaussian(), grid, Formulation::ConformalPsi).unwrap();
    let spec = EvolutionSpec::new(Formulation::ConformalPsi, *p, nl.clone(), p.t0, tau_end, dt)
        .recording(taus)
        .without_boundary_check();
    evolve(&spec, &init).unwrap().snapshots
}

/// The physical-frame solve, resolvable at moderate ε, conserves the energy
/// functional, and the conformal route evaluates the same number.
#[test]
fn physical_energy_is_conserved_and_frame_independent() {
    let p = make_params(0.2, 1.5, 2, 1).unwrap();
    let nl = Nonlinearity::cubic();
    let grid = GridSpec::new(2, 256, 7.0).unwrap();
    let init = initial_data(&p, &*unit_gaussian(), grid, Formulation::PhysicalU).unwrap();
    let spec = EvolutionSpec::new(Formulation::PhysicalU, p, nl.clone(), 0.0, 0.5, 1e-3)
        .recording(vec![0.25, 0.5]);
    let traj = evolve(&spec, &init).unwrap();
    let e0 = energy(&init, &p, &nl).unwrap();
    for u in &traj.snapshots {
        let e = energy(u, &p, &nl).unwrap();
        assert!(((e - e0) / e0).abs() < 1e-5, "{e} vs {e0} at t={}", u.time);
        let via_lens = frame_energy(&to_conformal(u, &p, u.time).unwrap(), &p, &nl).unwrap();
        assert!(((via_lens - e) / e).abs() < 1e-8, "{via_lens} vs {e}");
    }
    // The potential part is large enough here that a wrong factor would show.
    let kinetic_only = energy(&traj.final_state, &p, &Nonlinearity::zero()).unwrap();
    assert!((e0 - kinetic_only) / e0 > 0.05);
}

#[test]
fn hydrodynamic_forms_agree_and_reconstruct_the_solution() {
    let grid = GridSpec::new(2, 128, 8.0).unwrap();
    let nl = Nonlinearity::cubic();
    let p = PhysParams::from_hbar(0.2, 1.5, 2, 1).unwrap();
    let a0 = sample(grid, &*unit_gaussian()).unwrap();
    let t_end = 0.3;
    let phase = integrate_exact(
        &HydroState::from_amplitude(&a0, p.t0, p.hbar),
        &nl,
        t_end,
        5e-3,
        &FlowOptions::default(),
    )
    .unwrap();
    let velocity = integrate_velocity(
        &VelocityState::from_amplitude(&a0, p.t0, p.hbar),
        &nl,
        t_end,
        5e-3,
        &FlowOptions::default(),
    )
    .unwrap();
    assert!(gradient_consistency(&phase.final_state, &velocity.final_state).unwrap() < 1e-8);

    // On 128² the split-step error dominates (64² has a 5e-5 spatial floor):
    // halving its step cuts the gap ~4x.
    let fine = integrate_exact(
        &HydroState::from_amplitude(&a0, p.t0, p.hbar),
        &nl,
        t_end,
        1.25e-3,
        &FlowOptions::default(),
    )
    .unwrap();
    let rebuilt = reconstruct_psi(&fine.final_state).unwrap();
    let gaps: Vec<f64> = [1e-3, 5e-4]
        .iter()
        .map(|&dt| {
            gaussian_run(&p, &nl, grid, t_end, dt, vec![t_end])[0]
                .l2_distance(&rebuilt)
                .unwrap()
        })
        .collect();
    assert!(gaps[1] < gaps[0] / 3.0 && gaps[1] < 2e-5, "{gaps:?}");
}

/// With no nonlinearity the limit phase vanishes and the approximant is `a₀`
/// itself; its error is the free dispersion, shrinking as `τ = 1/Λ` does.
#[test]
fn zero_nonlinearity_reduces_to_free_dispersion() {
    let grid = GridSpec::new(2, 64, 8.0).unwrap();
    let nl = Nonlinearity::zero();
    let p = make_params(1e-3, 1.5, 2, 1).unwrap();
    let a0 = sample(grid, &*unit_gaussian()).unwrap();
    let limit = integrate_limit(&a0, &nl, 0.5, 1e-2, &FlowOptions::default()).unwrap();
    assert!(limit.final_state.phi.values.iter().all(|v| v.abs() < 1e-14));

    let flow = LimitFlow::new(
        compute_coeffs(&a0, &p, &nl).unwrap(),
        &nl,
        0.5,
        2.5e-3,
        0.05,
    )
    .unwrap();
    let taus = vec![1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0];
    let snaps = gaussian_run(&p, &nl, grid, 0.5, 1e-3, taus.clone());
    let phases = flow.phases(&taus).unwrap();
    let errs: Vec<f64> = snaps
        .iter()
        .zip(&phases)
        .zip(&taus)
        .map(|((psi, ph), &tau)| {
            psi.l2_distance(&phase_shifted(&a0, ph, p.hbar, tau).unwrap())
                .unwrap()
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[0] < w[1]), "{errs:?}");
    // Free Gaussian: ‖e^{iħsΔ/2}a₀ - a₀‖ ≈ ħs‖Δa₀‖/2 with ‖Δa₀‖² = 2π.
    let s = 0.5 - p.t0;
    let predicted = p.hbar * s * (2.0 * std::f64::consts::PI).sqrt() / 2.0;
    assert!(
        (errs[3] / predicted - 1.0).abs() < 0.05,
        "{} vs {predicted}",
        errs[3]
    );
}

/// Away from the first layer the truncated cascade is an accurate approximant.
#[test]
fn cascade_tracks_the_solution_before_the_first_layer() {
    let grid = GridSpec::new(2, 128, 8.0).unwrap();
    let nl = Nonlinearity::cubic();
    let p = make_params(3e-3, 1.5, 2, 1).unwrap();
    let tau = p.conformal_time(1.0 - p.eps.powf(0.45));
    let stack = build_stack(&unit_gaussian(), &p, 2, grid).unwrap();
    let psi = gaussian_run(&p, &nl, grid, tau, 1e-3, vec![tau]);
    let err = psi[0].l2_distance(&psi_n(&stack, 2, tau, p.hbar)).unwrap();
    assert!(err < 0.1, "{err}");
}
