//! Phase-shift cascade for the homogeneous nonlinearity `f(y) = y^σ`.
//!
//! The profiles `g_j` solve
//! `g_1 = -|a₀|^{2σ}`, `g_j = -½ Σ_{p+q=j} ∇g_p·∇g_q / ((pnσ-1)(qnσ-1))`,
//! and the truncated phase is
//! `g_N^ε(t, x) = Σ_j ε^{jα-1} (1-t)^{1-jnσ} g_j(x/(1-t)) / (jnσ-1)`.
//!
//! Under the lens transform `g_N^ε = G_N/ħ` with the ε-free conformal phase
//! `G_N(τ, ξ) = Σ_j τ^{jnσ-1} g_j(ξ)/(jnσ-1)`, so the approximant becomes
//! `ψ_N = a₀ e^{iG_N/ħ}` and all residual computations are done there.

use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{CascadeError, Result};
use crate::fit::{power_fit, LineFit};
use crate::grid::{resample, sample, Formulation, GridSpec, RealField, Spectral, WaveField};
use crate::model::{Amplitude, PhysParams};

#[derive(Clone)]
pub struct CascadeStack {
    /// `g_1 … g_N` on the reference ξ-grid.
    pub profiles: Vec<RealField>,
    /// `|a₀|^{2σ}` on the reference grid.
    pub a0_sq_sigma: RealField,
    pub a0: Amplitude,
    pub a0_field: WaveField,
    pub params: PhysParams,
    pub grid: GridSpec,
}

impl std::fmt::Debug for CascadeStack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CascadeStack")
            .field("terms", &self.profiles.len())
            .field("grid", &self.grid)
            .field("params", &self.params)
            .finish()
    }
}

impl CascadeStack {
    pub fn terms(&self) -> usize {
        self.profiles.len()
    }

    fn n_sigma(&self) -> f64 {
        self.params.n_dim as f64 * self.params.sigma as f64
    }

    /// `1/(jnσ - 1)`
    pub fn weight(&self, j: usize) -> f64 {
        1.0 / (j as f64 * self.n_sigma() - 1.0)
    }

    pub fn profile(&self, j: usize) -> &RealField {
        &self.profiles[j - 1]
    }
}

fn check_regime(params: &PhysParams) -> Result<()> {
    let ns = params.n_dim as f64 * params.sigma as f64;
    if !(ns > params.alpha && params.alpha > 1.0) {
        return Err(CascadeError::InvalidParams(format!(
            "cascade needs nσ > α > 1 (nσ = {ns}, α = {})",
            params.alpha
        )));
    }
    Ok(())
}

fn dot_gradients(a: &[Vec<C64>], b: &[Vec<C64>]) -> Vec<f64> {
    let mut out = vec![0.0; a[0].len()];
    for (ga, gb) in a.iter().zip(b) {
        for (o, (x, y)) in out.iter_mut().zip(ga.iter().zip(gb)) {
            *o += x.re * y.re;
        }
    }
    out
}

/// Dealiased spectral gradient of a real field.
fn gradient(spectral: &Spectral, field: &RealField) -> Vec<Vec<C64>> {
    let values: Vec<C64> = field.values.iter().map(|&v| C64::new(v, 0.0)).collect();
    spectral.gradient(&spectral.dealias(&values))
}

/// Build `g_1 … g_N` on `grid`.
pub fn build_stack(
    a0: &Amplitude,
    params: &PhysParams,
    n_terms: usize,
    grid: GridSpec,
) -> Result<CascadeStack> {
    check_regime(params)?;
    if n_terms == 0 {
        return Err(CascadeError::InvalidParams("cascade needs N >= 1".into()));
    }
    let a0_field = sample(grid, &**a0)?;
    let sigma = params.sigma as i32;
    let a0_sq_sigma = RealField::new(
        grid,
        a0_field
            .values
            .iter()
            .map(|v| v.norm_sqr().powi(sigma))
            .collect(),
    )?;
    let ns = params.n_dim as f64 * params.sigma as f64;
    let w = |p: usize| 1.0 / (p as f64 * ns - 1.0);
    let spectral = Spectral::new(grid);
    let mut profiles = vec![a0_sq_sigma.scaled(-1.0)];
    let mut grads = vec![gradient(&spectral, &profiles[0])];
    for j in 2..=n_terms {
        let mut g = vec![0.0; grid.len()];
        // Unordered pairs p <= q, off-diagonal pairs counted twice.
        for p in 1..=j / 2 {
            let q = j - p;
            let mult = if p == q { 1.0 } else { 2.0 };
            let c = -0.5 * mult * w(p) * w(q);
            let prod = dot_gradients(&grads[p - 1], &grads[q - 1]);
            for (o, v) in g.iter_mut().zip(prod) {
                *o += c * v;
            }
        }
        let field = RealField::new(grid, g)?;
        grads.push(gradient(&spectral, &field));
        profiles.push(field);
    }
    Ok(CascadeStack {
        profiles,
        a0_sq_sigma,
        a0: Arc::clone(a0),
        a0_field,
        params: *params,
        grid,
    })
}

/// Weight `ε^{jα-1}/((1-t)^{jnσ-1}(jnσ-1))` of the j-th term of `g_N^ε`.
pub fn term_weight(stack: &CascadeStack, j: usize, t: f64, eps: f64) -> f64 {
    let jf = j as f64;
    eps.powf(jf * stack.params.alpha - 1.0) / (1.0 - t).powf(jf * stack.n_sigma() - 1.0)
        * stack.weight(j)
}

fn check_t(t: f64) -> Result<()> {
    if !(t < 1.0) {
        return Err(CascadeError::OutOfRange(format!(
            "cascade evaluation needs t < 1, got {t}"
        )));
    }
    Ok(())
}

/// Values of `g_j(x/(1-t))` at the nodes of `grid`.
fn dilated_profile(stack: &CascadeStack, j: usize, t: f64, grid: &GridSpec) -> Result<Vec<f64>> {
    let field = stack.profile(j);
    let shrink = 1.0 - t;
    if grid.scaled(1.0 / shrink)?.same_as(&stack.grid) {
        return Ok(field.values.clone());
    }
    let axes: Vec<Vec<f64>> = (0..grid.dim())
        .map(|_| grid.axis_nodes().iter().map(|x| x / shrink).collect())
        .collect();
    let values: Vec<C64> = field.values.iter().map(|&v| C64::new(v, 0.0)).collect();
    Ok(resample(&stack.grid, &values, &axes)?
        .into_iter()
        .map(|v| v.re)
        .collect())
}

/// The truncated phase `g_N^ε(t, ·)` on the physical grid `grid`.
pub fn phase_g_n(
    stack: &CascadeStack,
    n_terms: usize,
    t: f64,
    eps: f64,
    grid: GridSpec,
) -> Result<RealField> {
    check_t(t)?;
    let mut out = RealField::zeros(grid);
    for j in 1..=n_terms.min(stack.terms()) {
        let w = term_weight(stack, j, t, eps);
        for (o, v) in out
            .values
            .iter_mut()
            .zip(dilated_profile(stack, j, t, &grid)?)
        {
            *o += w * v;
        }
    }
    Ok(out)
}

/// The j-th term of `g_N^ε(t, ·)` alone, on the physical grid `grid`.
pub fn phase_term(
    stack: &CascadeStack,
    j: usize,
    t: f64,
    eps: f64,
    grid: GridSpec,
) -> Result<RealField> {
    check_t(t)?;
    if j == 0 || j > stack.terms() {
        return Err(CascadeError::OutOfRange(format!(
            "term {j} not in 1..={}",
            stack.terms()
        )));
    }
    let w = term_weight(stack, j, t, eps);
    RealField::new(
        grid,
        dilated_profile(stack, j, t, &grid)?
            .into_iter()
            .map(|v| w * v)
            .collect(),
    )
}

/// `v_N^ε = (1-t)^{-n/2} a₀(x/(1-t)) exp(i|x|²/(2ε(t-1)) + i g_N^ε)`.
pub fn v_n(
    stack: &CascadeStack,
    n_terms: usize,
    t: f64,
    eps: f64,
    grid: GridSpec,
) -> Result<WaveField> {
    let phase = phase_g_n(stack, n_terms, t, eps, grid)?;
    let profile = crate::linear::LinearWkbProfile::new(eps, Arc::clone(&stack.a0));
    let mut v = crate::linear::wkb_linear(&profile, grid, t)?;
    for (u, g) in v.values.iter_mut().zip(&phase.values) {
        *u *= C64::from_polar(1.0, *g);
    }
    Ok(v)
}

/// `G_N(τ, ξ) = Σ_j τ^{jnσ-1} g_j(ξ)/(jnσ-1)` on the reference grid.
pub fn conformal_phase(stack: &CascadeStack, n_terms: usize, tau: f64) -> RealField {
    let mut out = RealField::zeros(stack.grid);
    for j in 1..=n_terms.min(stack.terms()) {
        out.axpy(mapped_term_weight(stack, j, tau), stack.profile(j));
    }
    out
}

/// `τ^{jnσ-1}/(jnσ-1)`, the weight of `g_j` in the conformal phase.
pub fn mapped_term_weight(stack: &CascadeStack, j: usize, tau: f64) -> f64 {
    tau.powf(j as f64 * stack.n_sigma() - 1.0) * stack.weight(j)
}

/// Lens image `a₀ e^{iG_N/ħ}` of `v_N^ε` at conformal time `tau`.
pub fn psi_n(stack: &CascadeStack, n_terms: usize, tau: f64, hbar: f64) -> WaveField {
    let phase = conformal_phase(stack, n_terms, tau);
    let values = stack
        .a0_field
        .values
        .iter()
        .zip(&phase.values)
        .map(|(a, g)| a * C64::from_polar(1.0, g / hbar))
        .collect();
    WaveField {
        grid: stack.grid,
        values,
        time: tau,
        formulation: Formulation::ConformalPsi,
    }
}

/// Variants of the residual used for sanity checks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ResidualOptions {
    /// Omit `ε^α|v|^{2σ}v`.
    pub drop_nonlinear: bool,
    /// Force every cascade weight to zero (`v_N` becomes the linear WKB profile).
    pub zero_weights: bool,
}

fn effective_terms(n_terms: usize, opts: ResidualOptions) -> usize {
    if opts.zero_weights {
        0
    } else {
        n_terms
    }
}

/// Conformal residual `iħψ_τ + ħ²/2 Δψ - τ^{nσ-2}|ψ|^{2σ}ψ` of `ψ_N` with the
/// time derivative by centered differences of step `1e-6 τ`.
pub fn conformal_residual(
    stack: &CascadeStack,
    n_terms: usize,
    tau: f64,
    hbar: f64,
    opts: ResidualOptions,
) -> Vec<C64> {
    let n = effective_terms(n_terms, opts);
    let delta = 1e-6 * tau;
    let plus = psi_n(stack, n, tau + delta, hbar);
    let minus = psi_n(stack, n, tau - delta, hbar);
    let mid = psi_n(stack, n, tau, hbar);
    let spectral = Spectral::new(stack.grid);
    let lap = spectral.laplacian(&mid.values);
    let sigma = stack.params.sigma as i32;
    let coef = tau.powf(stack.n_sigma() - 2.0);
    let i_hbar = C64::new(0.0, hbar);
    (0..mid.values.len())
        .map(|i| {
            let dt = (plus.values[i] - minus.values[i]) / (2.0 * delta);
            let mut r = i_hbar * dt + 0.5 * hbar * hbar * lap[i];
            if !opts.drop_nonlinear {
                r -= coef * mid.values[i].norm_sqr().powi(sigma) * mid.values[i];
            }
            r
        })
        .collect()
}

fn l2(grid: &GridSpec, values: &[C64]) -> f64 {
    (values.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_volume()).sqrt()
}

/// `‖iε∂_t v_N + ε²/2 Δv_N - ε^α|v_N|^{2σ}v_N‖_{L²}` at physical time `t`,
/// computed as `τ²` times the conformal residual norm.
pub fn residual_norm(
    stack: &CascadeStack,
    n_terms: usize,
    t: f64,
    eps: f64,
    opts: ResidualOptions,
) -> Result<f64> {
    check_t(t)?;
    // The physical differencing step 1e-6 (1-t) must stay representable next to t.
    if 1.0 - t < 1e-9 {
        return Err(CascadeError::OutOfRange(format!(
            "1 - t = {} too small for differencing",
            1.0 - t
        )));
    }
    let p = stack.params.with_eps(eps)?;
    let tau = p.conformal_time(t);
    let r = conformal_residual(stack, n_terms, tau, p.hbar, opts);
    Ok(tau * tau * l2(&stack.grid, &r))
}

/// Exact residual of `ψ_N` without any time differencing:
/// `ħ²/2 Δa₀ e + iħ(∇G·∇a₀ + ½a₀ΔG) e + B ψ_N` with `e = e^{iG/ħ}` and
/// `B = -∂_τG - ½|∇G|² - τ^{nσ-2}|a₀|^{2σ}`, which collects the orders
/// `τ^{jnσ-2}`, `N < j ≤ 2N`, left over by the recursion.
pub fn conformal_residual_closed_form(
    stack: &CascadeStack,
    n_terms: usize,
    tau: f64,
    hbar: f64,
) -> Vec<C64> {
    let n = n_terms.min(stack.terms());
    let spectral = Spectral::new(stack.grid);
    let to_c = |f: &RealField| -> Vec<C64> { f.values.iter().map(|&v| C64::new(v, 0.0)).collect() };
    let big_g = conformal_phase(stack, n, tau);
    let mut dg_dtau = RealField::zeros(stack.grid);
    for j in 1..=n {
        dg_dtau.axpy(tau.powf(j as f64 * stack.n_sigma() - 2.0), stack.profile(j));
    }
    let grad_g = spectral.gradient(&to_c(&big_g));
    let lap_g = spectral.laplacian(&to_c(&big_g));
    let grad_a = spectral.gradient(&stack.a0_field.values);
    let lap_a = spectral.laplacian(&stack.a0_field.values);
    let coef = tau.powf(stack.n_sigma() - 2.0);
    (0..stack.grid.len())
        .map(|i| {
            let a = stack.a0_field.values[i];
            let e = C64::from_polar(1.0, big_g.values[i] / hbar);
            let mut transport = 0.5 * a * lap_g[i].re;
            let mut grad_sq = 0.0;
            for axis in 0..stack.grid.dim() {
                transport += grad_g[axis][i].re * grad_a[axis][i];
                grad_sq += grad_g[axis][i].re.powi(2);
            }
            let bracket = -dg_dtau.values[i] - 0.5 * grad_sq - coef * stack.a0_sq_sigma.values[i];
            (0.5 * hbar * hbar * lap_a[i] + C64::new(0.0, hbar) * transport + bracket * a) * e
        })
        .collect()
}

pub fn residual_norm_closed_form(
    stack: &CascadeStack,
    n_terms: usize,
    t: f64,
    eps: f64,
) -> Result<f64> {
    check_t(t)?;
    let p = stack.params.with_eps(eps)?;
    let tau = p.conformal_time(t);
    Ok(tau
        * tau
        * l2(
            &stack.grid,
            &conformal_residual_closed_form(stack, n_terms, tau, p.hbar),
        ))
}

/// Accumulated source `(1/ε)∫_0^t ‖r_N(s)‖ ds`, which equals
/// `(1/ħ)∫_{ε^γ}^{τ} ‖R_N(τ')‖ dτ'` in conformal time; composite Simpson on
/// a logarithmic grid of `panels` (even) intervals.
pub fn accumulated_residual(
    stack: &CascadeStack,
    n_terms: usize,
    t: f64,
    eps: f64,
    panels: usize,
) -> Result<f64> {
    check_t(t)?;
    let p = stack.params.with_eps(eps)?;
    let tau_end = p.conformal_time(t);
    if tau_end <= p.t0 {
        return Ok(0.0);
    }
    let m = panels + panels % 2;
    let (la, lb) = (p.t0.ln(), tau_end.ln());
    let h = (lb - la) / m as f64;
    let mut sum = 0.0;
    for i in 0..=m {
        let tau = (la + i as f64 * h).exp();
        let r = l2(
            &stack.grid,
            &conformal_residual_closed_form(stack, n_terms, tau, p.hbar),
        );
        let w = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        // dτ = τ d(ln τ)
        sum += w * r * tau;
    }
    Ok(sum * h / 3.0 / p.hbar)
}

/// `sup_x |j-th term of g_N^ε(t)|`.
pub fn term_sup(stack: &CascadeStack, j: usize, t: f64, eps: f64) -> f64 {
    term_weight(stack, j, t, eps) * stack.profile(j).sup_norm()
}

/// The layer width `1-t` at which the j-th term reaches sup-magnitude 1,
/// located by bisection in `ln(1-t)`.
pub fn onset_layer(stack: &CascadeStack, j: usize, eps: f64) -> Result<f64> {
    let f = |ln_w: f64| term_sup(stack, j, 1.0 - ln_w.exp(), eps).ln();
    let (mut lo, mut hi) = ((1e-300f64).ln(), 0.0);
    if f(hi) > 0.0 || f(lo) < 0.0 {
        return Err(CascadeError::OutOfRange(format!(
            "term {j} has no unit crossing at eps = {eps}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Fit of `ln(onset layer)` against `ln ε` for term `j`.
pub fn onset_exponent(stack: &CascadeStack, j: usize, eps_list: &[f64]) -> Result<LineFit> {
    let layers: Vec<f64> = eps_list
        .iter()
        .map(|&e| onset_layer(stack, j, e))
        .collect::<Result<_>>()?;
    power_fit(eps_list, &layers)
}

/// Convert a physical-frame phase (radians, on a grid at time `t`) to the
/// conformal phase in `φ` units: multiply by `ħ` and relabel `x → x/(1-t)`.
/// This is the single convention used whenever cascade terms are compared
/// with the hydrodynamic phase.
pub fn physical_phase_to_conformal(
    phase: &RealField,
    params: &PhysParams,
    t: f64,
) -> Result<RealField> {
    check_t(t)?;
    Ok(RealField {
        grid: phase.grid.scaled(1.0 / (1.0 - t))?,
        values: phase.values.iter().map(|v| v * params.hbar).collect(),
    })
}

/// Radial asymmetry `max |g(x) - g(R x)|` over quarter turns, on 2D grids.
pub fn quarter_turn_asymmetry(field: &RealField) -> f64 {
    let g = field.grid;
    if g.dim() != 2 {
        return 0.0;
    }
    let n = g.points();
    let mut worst = 0.0_f64;
    // The node set is symmetric under i -> N - i (mod N) about the origin node N/2.
    for i0 in 1..n {
        for i1 in 1..n {
            let a = field.values[i0 * n + i1];
            let r0 = i1;
            let r1 = n - i0;
            let b = field.values[r0 * n + r1];
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_params, unit_gaussian};
    use proptest::prelude::*;

    fn gaussian_stack(params: &PhysParams, n_terms: usize, grid: GridSpec) -> Result<CascadeStack> {
        build_stack(&unit_gaussian(), params, n_terms, grid)
    }

    fn reference() -> PhysParams {
        make_params(1e-3, 1.5, 2, 1).unwrap()
    }

    fn grid2() -> GridSpec {
        GridSpec::new(2, 128, 8.0).unwrap()
    }

    #[test]
    fn first_profiles_of_the_gaussian() {
        let s = gaussian_stack(&reference(), 3, grid2()).unwrap();
        let g = grid2();
        let origin = 64 * 128 + 64;
        assert!((s.profile(1).values[origin] + 1.0).abs() < 1e-15);
        assert!(s.profile(2).values[origin].abs() < 1e-12);
        // ξ = (1, 0) is a node: 64 + 1/h with h = 1/8.
        let idx = (64 + 8) * 128 + 64;
        assert_eq!(g.position(idx), [1.0, 0.0]);
        // Oracle: g₂ = -½|∇g₁|² = -2|ξ|² e^{-2|ξ|²} for n = 2, σ = 1.
        let oracle = -2.0 * (-2.0f64).exp();
        assert!((s.profile(2).values[idx] - oracle).abs() < 1e-10);
        let err = s
            .profile(2)
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let p = g.position(i);
                let r2 = p[0] * p[0] + p[1] * p[1];
                (v + 2.0 * r2 * (-2.0 * r2).exp()).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn second_profile_against_refined_finite_differences() {
        // Fourth-order central differences of g₁ on a grid four times finer.
        let p = reference();
        let s = gaussian_stack(&p, 2, GridSpec::new(2, 64, 8.0).unwrap()).unwrap();
        let h = 0.25 / 4.0;
        let g1 = |x: f64, y: f64| -(-(x * x + y * y)).exp();
        let d = |f: &dyn Fn(f64) -> f64| {
            (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
        };
        for &(x, y) in &[(1.0, 0.0), (0.5, -0.75), (-1.25, 1.0)] {
            let gx = d(&|e| g1(x + e, y));
            let gy = d(&|e| g1(x, y + e));
            let fd = -0.5 * (gx * gx + gy * gy);
            let idx = s.grid.points() * ((x + 8.0) / 0.25) as usize + ((y + 8.0) / 0.25) as usize;
            assert!(
                (s.profile(2).values[idx] - fd).abs() < 1e-5,
                "{} vs {fd}",
                s.profile(2).values[idx]
            );
        }
    }

    #[test]
    fn recursion_matches_ordered_double_loop() {
        let p = make_params(0.01, 1.2, 2, 2).unwrap();
        let grid = GridSpec::new(2, 64, 6.0).unwrap();
        let a0: Amplitude =
            Arc::new(|x: &[f64]| C64::new((-(x[0] * x[0] + 0.5 * x[1] * x[1]) / 2.0).exp(), 0.0));
        let s = build_stack(&a0, &p, 4, grid).unwrap();
        let spectral = Spectral::new(grid);
        let ns = 4.0;
        for j in 2..=4 {
            let mut oracle = vec![0.0; grid.len()];
            for p_ in 1..j {
                let q = j - p_;
                let gp = gradient(&spectral, s.profile(p_));
                let gq = gradient(&spectral, s.profile(q));
                let c = -0.5 / ((p_ as f64 * ns - 1.0) * (q as f64 * ns - 1.0));
                for i in 0..grid.len() {
                    oracle[i] += c * (gp[0][i].re * gq[0][i].re + gp[1][i].re * gq[1][i].re);
                }
            }
            let err = oracle
                .iter()
                .zip(&s.profile(j).values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-14, "j = {j}: {err}");
        }
    }

    #[test]
    fn radial_symmetry_is_preserved() {
        let s = gaussian_stack(&reference(), 4, grid2()).unwrap();
        for j in 1..=4 {
            assert!(quarter_turn_asymmetry(s.profile(j)) < 1e-9);
        }
    }

    #[test]
    fn profiles_decay_at_the_boundary() {
        let s = gaussian_stack(&reference(), 4, grid2()).unwrap();
        for j in 1..=4 {
            assert!(s.profile(j).boundary_max() < 1e-8 * s.profile(j).sup_norm());
        }
    }

    #[test]
    fn regime_is_enforced() {
        let sub = make_params(0.01, 0.9, 2, 1).unwrap();
        assert!(gaussian_stack(&sub, 2, grid2()).is_err());
        assert!(gaussian_stack(&reference(), 0, grid2()).is_err());
    }

    #[test]
    fn first_term_weight_at_time_zero() {
        let p = make_params(0.01, 1.5, 2, 1).unwrap();
        let s = gaussian_stack(&p, 1, grid2()).unwrap();
        let phase = phase_g_n(&s, 1, 0.0, 0.01, grid2()).unwrap();
        for (a, b) in phase.values.iter().zip(&s.profile(1).values) {
            assert!((a - 0.1 * b).abs() < 1e-15);
        }
        assert!(phase_g_n(&s, 1, 1.0, 0.01, grid2()).is_err());
    }

    #[test]
    fn first_term_scaling_law() {
        let p = reference();
        let s = gaussian_stack(&p, 1, grid2()).unwrap();
        let lambda = 4.0;
        let vals: Vec<f64> = [1e-2, 1e-3]
            .iter()
            .map(|&eps: &f64| {
                let q = p.with_eps(eps).unwrap();
                let t = 1.0 - lambda * q.t0;
                let phys = s.grid.scaled(1.0 - t).unwrap();
                phase_g_n(&s, 1, t, eps, phys).unwrap().sup_norm() * q.hbar
            })
            .collect();
        assert!((vals[0] - vals[1]).abs() < 1e-10 * vals[0]);
    }

    #[test]
    fn v_n_modulus_and_mass() {
        let p = make_params(0.05, 1.5, 2, 1).unwrap();
        let s = gaussian_stack(&p, 2, GridSpec::new(2, 128, 10.0).unwrap()).unwrap();
        let g = GridSpec::new(2, 128, 6.0).unwrap();
        let t = 0.4;
        let v = v_n(&s, 2, t, p.eps, g).unwrap();
        let w = crate::linear::wkb_linear(
            &crate::linear::LinearWkbProfile::new(p.eps, unit_gaussian()),
            g,
            t,
        )
        .unwrap();
        for (a, b) in v.values.iter().zip(&w.values) {
            assert!((a.norm() - b.norm()).abs() < 1e-13 * b.norm().max(1.0));
        }
        assert!((v.mass().sqrt() - std::f64::consts::PI.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn closed_form_agrees_with_differenced_residual() {
        let p = reference();
        let s = gaussian_stack(&p, 3, grid2()).unwrap();
        for n in 1..=3 {
            for t in [0.5, 0.9, 0.97] {
                let a = residual_norm(&s, n, t, p.eps, ResidualOptions::default()).unwrap();
                let b = residual_norm_closed_form(&s, n, t, p.eps).unwrap();
                assert!((a - b).abs() < 1e-5 * b, "N = {n}, t = {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn linear_limit_residual() {
        let p = reference();
        let s = gaussian_stack(&p, 1, grid2()).unwrap();
        let opts = ResidualOptions {
            drop_nonlinear: true,
            zero_weights: true,
        };
        let t = 0.75;
        let eps_list = [1e-2, 1e-3, 1e-4];
        let r: Vec<f64> = eps_list
            .iter()
            .map(|&e| residual_norm(&s, 1, t, e, opts).unwrap())
            .collect();
        // ε²/(2(1-t)²) ‖Δa₀‖ with ‖Δa₀‖² = 2π for the 2D unit Gaussian.
        for (e, v) in eps_list.iter().zip(&r) {
            let exact = e * e / (2.0 * 0.0625) * (2.0 * std::f64::consts::PI).sqrt();
            assert!((v - exact).abs() < 1e-4 * exact, "{v} vs {exact}");
        }
        let fit = power_fit(&eps_list, &r).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.1);
    }

    #[test]
    fn residual_exponent_for_one_term() {
        let p = reference();
        let s = gaussian_stack(&p, 1, grid2()).unwrap();
        let eps_list = [1e-3, 1e-4, 1e-5];
        let r: Vec<f64> = eps_list
            .iter()
            .map(|&e| residual_norm(&s, 1, 0.75, e, ResidualOptions::default()).unwrap())
            .collect();
        let fit = power_fit(&eps_list, &r).unwrap();
        assert!((fit.slope - (2.0 * p.alpha - 1.0)).abs() < 0.15, "{fit:?}");
    }

    #[test]
    fn more_terms_help_between_layers() {
        let p = reference();
        let s = gaussian_stack(&p, 2, grid2()).unwrap();
        for eps in [1e-3f64, 1e-4] {
            let t = 1.0 - eps.powf(0.55);
            let r1 = residual_norm(&s, 1, t, eps, ResidualOptions::default()).unwrap();
            let r2 = residual_norm(&s, 2, t, eps, ResidualOptions::default()).unwrap();
            assert!(r2 < r1, "eps = {eps}: {r2} vs {r1}");
        }
    }

    #[test]
    fn accumulated_source_window() {
        // The accumulated source shrinks as the layer widens and is small once
        // 1-t is several ε^γ; at 1-t = 2ε^γ it stays O(0.2) for every ε.
        let p = reference();
        let s = gaussian_stack(&p, 2, grid2()).unwrap();
        for eps in [1e-2f64, 1e-3, 1e-4] {
            let q = p.with_eps(eps).unwrap();
            let mut prev = f64::INFINITY;
            for widths in [2.0, 4.0, 6.0, 8.0] {
                let a = accumulated_residual(&s, 2, 1.0 - widths * q.t0, eps, 64).unwrap();
                assert!(a < prev, "eps = {eps}, width {widths}: {a} vs {prev}");
                if widths >= 6.0 {
                    assert!(a < 0.1, "eps = {eps}, width {widths}: {a}");
                }
                prev = a;
            }
        }
    }

    #[test]
    fn onset_exponents_follow_the_ladder() {
        let p = reference();
        let s = gaussian_stack(&p, 2, grid2()).unwrap();
        let eps_list = [1e-2, 1e-3, 1e-4];
        for j in 1..=2 {
            let fit = onset_exponent(&s, j, &eps_list).unwrap();
            assert!((fit.slope - p.layer_exponent(j)).abs() < 0.05);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn recursion_symmetry_for_random_widths(w0 in 0.7..1.5f64, w1 in 0.7..1.5f64) {
            let p = make_params(0.01, 1.5, 2, 1).unwrap();
            let grid = GridSpec::new(2, 64, 8.0).unwrap();
            let a0: Amplitude = Arc::new(move |x: &[f64]| {
                C64::new((-(x[0] * x[0] / (w0 * w0) + x[1] * x[1] / (w1 * w1)) / 2.0).exp(), 0.0)
            });
            let s = build_stack(&a0, &p, 3, grid).unwrap();
            // Swapping the axes of the datum swaps the axes of every profile.
            let swapped: Amplitude = Arc::new(move |x: &[f64]| {
                C64::new((-(x[1] * x[1] / (w0 * w0) + x[0] * x[0] / (w1 * w1)) / 2.0).exp(), 0.0)
            });
            let t = build_stack(&swapped, &p, 3, grid).unwrap();
            let n = grid.points();
            for j in 1..=3 {
                for i0 in 0..n {
                    for i1 in 0..n {
                        let a = s.profile(j).values[i0 * n + i1];
                        let b = t.profile(j).values[i1 * n + i0];
                        prop_assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
