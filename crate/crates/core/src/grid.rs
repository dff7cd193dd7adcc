//! Uniform periodic grids on `[-L, L)^d` (d = 1 or 2) with FFT-based
//! differentiation, Sobolev norms, trigonometric resampling and the `CFD1`
//! binary dump format.
//!
//! Values are stored row-major: in 2D the linear index of node `(i0, i1)` is
//! `i0 * N + i1`, with `i0` running along the first coordinate.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{CascadeError, Result};

pub type C64 = Complex64;

/// Which unknown a field carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `u^ε` in the physical frame.
    PhysicalU,
    /// `ψ^ħ` after the conformal (lens) transform.
    ConformalPsi,
    /// `φ^ħ` after the focusing rescaling.
    RescaledPhi,
    Auxiliary,
}

impl Formulation {
    pub fn tag(self) -> u8 {
        match self {
            Formulation::PhysicalU => 0,
            Formulation::ConformalPsi => 1,
            Formulation::RescaledPhi => 2,
            Formulation::Auxiliary => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Formulation::PhysicalU,
            1 => Formulation::ConformalPsi,
            2 => Formulation::RescaledPhi,
            3 => Formulation::Auxiliary,
            other => {
                return Err(CascadeError::Format(format!(
                    "unknown formulation tag {other}"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    points: usize,
    half_width: f64,
}

impl GridSpec {
    pub fn new(dim: usize, points: usize, half_width: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(CascadeError::InvalidGrid(format!(
                "dimension {dim} not in {{1, 2}}"
            )));
        }
        if points < 16 || !points.is_power_of_two() {
            return Err(CascadeError::InvalidGrid(format!(
                "points per axis {points} must be a power of two >= 16"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(CascadeError::InvalidGrid(format!(
                "half width {half_width} must be positive"
            )));
        }
        Ok(Self {
            dim,
            points,
            half_width,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// Total number of nodes, `points^dim`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume element `spacing^dim` of the Riemann-sum quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Same index array with the physical extent multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.dim, self.points, self.half_width * factor)
    }

    pub fn axis_nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points)
            .map(|i| -self.half_width + i as f64 * h)
            .collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.points as i64;
        let dk = PI / self.half_width;
        (0..n)
            .map(|m| {
                let m = if m < n / 2 { m } else { m - n };
                m as f64 * dk
            })
            .collect()
    }

    /// Position of the node with linear index `idx` (unused trailing entries are 0).
    pub fn position(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.dim {
            1 => [-self.half_width + idx as f64 * h, 0.0],
            _ => {
                let i0 = idx / self.points;
                let i1 = idx % self.points;
                [
                    -self.half_width + i0 as f64 * h,
                    -self.half_width + i1 as f64 * h,
                ]
            }
        }
    }

    /// `|x|^2` at every node.
    pub fn radius_sq(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let p = self.position(i);
                p[0] * p[0] + p[1] * p[1]
            })
            .collect()
    }

    /// Whether the node lies on the outermost layer of the box.
    pub fn is_boundary(&self, idx: usize) -> bool {
        let last = self.points - 1;
        match self.dim {
            1 => idx == 0 || idx == last,
            _ => {
                let i0 = idx / self.points;
                let i1 = idx % self.points;
                i0 == 0 || i0 == last || i1 == 0 || i1 == last
            }
        }
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.dim == other.dim
            && self.points == other.points
            && (self.half_width - other.half_width).abs() <= 1e-12 * self.half_width
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(CascadeError::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    pub grid: GridSpec,
    pub values: Vec<C64>,
    pub time: f64,
    pub formulation: Formulation,
}

impl WaveField {
    pub fn new(
        grid: GridSpec,
        values: Vec<C64>,
        time: f64,
        formulation: Formulation,
    ) -> Result<Self> {
        check_shape(&grid, values.len())?;
        if let Some(i) = values
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(CascadeError::NonFinite {
                position: grid.position(i)[..grid.dim()].to_vec(),
            });
        }
        Ok(Self {
            grid,
            values,
            time,
            formulation,
        })
    }

    pub fn zeros(grid: GridSpec, formulation: Formulation) -> Self {
        Self {
            grid,
            values: vec![C64::new(0.0, 0.0); grid.len()],
            time: 0.0,
            formulation,
        }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.norm()))
    }

    pub fn boundary_max(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.is_boundary(*i))
            .fold(0.0_f64, |m, (_, v)| m.max(v.norm()))
    }

    /// Discrete `L²` distance to another field on the same grid.
    pub fn l2_distance(&self, other: &WaveField) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        Ok((s * self.grid.cell_volume()).sqrt())
    }

    pub fn modulus(&self) -> RealField {
        RealField {
            grid: self.grid,
            values: self.values.iter().map(|v| v.norm()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_shape(&grid, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CascadeError::NonFinite {
                position: grid.position(i)[..grid.dim()].to_vec(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn boundary_max(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.is_boundary(*i))
            .fold(0.0_f64, |m, (_, v)| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> RealField {
        RealField {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn axpy(&mut self, factor: f64, other: &RealField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }
}

fn check_shape(grid: &GridSpec, len: usize) -> Result<()> {
    if len != grid.len() {
        return Err(CascadeError::InvalidGrid(format!(
            "value count {len} does not match grid size {}",
            grid.len()
        )));
    }
    Ok(())
}

/// Fields that can be differentiated spectrally.
pub trait SpectralField: Sized {
    fn grid(&self) -> &GridSpec;
    fn to_complex(&self) -> Vec<C64>;
    /// Rebuild a field of the same kind (keeping metadata) from complex values.
    fn with_values(&self, values: Vec<C64>) -> Self;
}

impl SpectralField for WaveField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn to_complex(&self) -> Vec<C64> {
        self.values.clone()
    }

    fn with_values(&self, values: Vec<C64>) -> Self {
        WaveField {
            grid: self.grid,
            values,
            time: self.time,
            formulation: self.formulation,
        }
    }
}

impl SpectralField for RealField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn to_complex(&self) -> Vec<C64> {
        self.values.iter().map(|&v| C64::new(v, 0.0)).collect()
    }

    fn with_values(&self, values: Vec<C64>) -> Self {
        RealField {
            grid: self.grid,
            values: values.into_iter().map(|v| v.re).collect(),
        }
    }
}

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(n: usize) -> Plans {
    static CACHE: OnceLock<Mutex<HashMap<usize, Plans>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

/// FFT machinery bound to one grid.
#[derive(Clone)]
pub struct Spectral {
    grid: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    k_axis: Vec<f64>,
    /// `|k|^2` at each spectral index.
    k_sq: Vec<f64>,
    cutoff: usize,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("grid", &self.grid)
            .finish()
    }
}

impl Spectral {
    pub fn new(grid: GridSpec) -> Self {
        let (forward, inverse) = plans(grid.points());
        let k_axis = grid.wavenumbers();
        let n = grid.points();
        let k_sq = match grid.dim() {
            1 => k_axis.iter().map(|k| k * k).collect(),
            _ => (0..n * n)
                .map(|i| {
                    let (a, b) = (k_axis[i / n], k_axis[i % n]);
                    a * a + b * b
                })
                .collect(),
        };
        Self {
            grid,
            forward,
            inverse,
            k_axis,
            k_sq,
            cutoff: n / 3,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn k_sq(&self) -> &[f64] {
        &self.k_sq
    }

    fn transform(&self, data: &mut [C64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.grid.points();
        fft.process(data);
        if self.grid.dim() == 2 {
            let mut t = vec![C64::new(0.0, 0.0); n * n];
            transpose(data, &mut t, n);
            fft.process(&mut t);
            transpose(&t, data, n);
        }
    }

    /// Unnormalised forward DFT in place.
    pub fn forward(&self, data: &mut [C64]) {
        self.transform(data, &self.forward);
    }

    /// Normalised inverse DFT in place.
    pub fn inverse(&self, data: &mut [C64]) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Signed mode number along each axis for spectral index `idx`.
    fn modes(&self, idx: usize) -> [i64; 2] {
        let n = self.grid.points();
        let signed = |m: usize| {
            if m < n / 2 {
                m as i64
            } else {
                m as i64 - n as i64
            }
        };
        match self.grid.dim() {
            1 => [signed(idx), 0],
            _ => [signed(idx / n), signed(idx % n)],
        }
    }

    fn axis_k(&self, idx: usize, axis: usize) -> f64 {
        let n = self.grid.points();
        let m = match (self.grid.dim(), axis) {
            (1, _) => idx,
            (_, 0) => idx / n,
            _ => idx % n,
        };
        // Odd derivatives of the Nyquist mode are not representable.
        if m == n / 2 {
            0.0
        } else {
            self.k_axis[m]
        }
    }

    /// Multiply spectral coefficients by `mult(idx)` and transform back.
    pub fn apply(&self, values: &[C64], mult: impl Fn(usize) -> C64) -> Vec<C64> {
        let mut data = values.to_vec();
        self.forward(&mut data);
        for (i, v) in data.iter_mut().enumerate() {
            *v *= mult(i);
        }
        self.inverse(&mut data);
        data
    }

    pub fn gradient(&self, values: &[C64]) -> Vec<Vec<C64>> {
        let mut spec = values.to_vec();
        self.forward(&mut spec);
        (0..self.grid.dim())
            .map(|axis| {
                let mut d: Vec<C64> = spec
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * C64::new(0.0, self.axis_k(i, axis)))
                    .collect();
                self.inverse(&mut d);
                d
            })
            .collect()
    }

    pub fn laplacian(&self, values: &[C64]) -> Vec<C64> {
        self.apply(values, |i| C64::new(-self.k_sq[i], 0.0))
    }

    /// Gradient and Laplacian from a single forward transform.
    pub fn gradient_and_laplacian(&self, values: &[C64]) -> (Vec<Vec<C64>>, Vec<C64>) {
        let mut spec = values.to_vec();
        self.forward(&mut spec);
        let grad = (0..self.grid.dim())
            .map(|axis| {
                let mut d: Vec<C64> = spec
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * C64::new(0.0, self.axis_k(i, axis)))
                    .collect();
                self.inverse(&mut d);
                d
            })
            .collect();
        let mut lap: Vec<C64> = spec.iter().zip(&self.k_sq).map(|(v, k2)| -v * k2).collect();
        self.inverse(&mut lap);
        (grad, lap)
    }

    /// `Σ_j ∂_j w_j`, optionally truncated by the 2/3 rule before returning.
    pub fn divergence(&self, components: &[Vec<C64>], dealias: bool) -> Vec<C64> {
        let mut acc = vec![C64::new(0.0, 0.0); self.grid.len()];
        for (axis, w) in components.iter().enumerate() {
            let mut spec = w.clone();
            self.forward(&mut spec);
            for (i, (a, v)) in acc.iter_mut().zip(&spec).enumerate() {
                *a += v * C64::new(0.0, self.axis_k(i, axis));
            }
        }
        if dealias {
            self.dealias_spectrum(&mut acc);
        }
        self.inverse(&mut acc);
        acc
    }

    /// Zero every mode beyond two thirds of the resolved band (2/3 rule).
    pub fn dealias_spectrum(&self, spec: &mut [C64]) {
        for (i, v) in spec.iter_mut().enumerate() {
            let m = self.modes(i);
            if m[0].unsigned_abs() as usize > self.cutoff
                || m[1].unsigned_abs() as usize > self.cutoff
            {
                *v = C64::new(0.0, 0.0);
            }
        }
    }

    pub fn dealias(&self, values: &[C64]) -> Vec<C64> {
        let mut spec = values.to_vec();
        self.forward(&mut spec);
        self.dealias_spectrum(&mut spec);
        self.inverse(&mut spec);
        spec
    }

    /// `(Σ (1+|k|²)^s |f̂_k|²)·h^d/M`, the squared `H^s` norm via Parseval.
    pub fn sobolev_sq(&self, values: &[C64], s: f64) -> f64 {
        let mut spec = values.to_vec();
        self.forward(&mut spec);
        let sum: f64 = spec
            .iter()
            .zip(&self.k_sq)
            .map(|(v, k2)| {
                if s == 0.0 {
                    v.norm_sqr()
                } else {
                    (1.0 + k2).powf(s) * v.norm_sqr()
                }
            })
            .sum();
        sum * self.grid.cell_volume() / spec.len() as f64
    }

    /// Fraction of the spectral energy carried by modes beyond the 2/3 cutoff.
    pub fn tail_fraction(&self, values: &[C64]) -> f64 {
        let mut spec = values.to_vec();
        self.forward(&mut spec);
        let mut total = 0.0;
        let mut tail = 0.0;
        for (i, v) in spec.iter().enumerate() {
            let e = v.norm_sqr();
            total += e;
            let m = self.modes(i);
            if m[0].unsigned_abs() as usize > self.cutoff
                || m[1].unsigned_abs() as usize > self.cutoff
            {
                tail += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }
}

fn transpose(src: &[C64], dst: &mut [C64], n: usize) {
    const B: usize = 32;
    for ib in (0..n).step_by(B) {
        for jb in (0..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                for j in jb..(jb + B).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

pub fn sample(grid: GridSpec, f: impl Fn(&[f64]) -> C64) -> Result<WaveField> {
    let values: Vec<C64> = (0..grid.len())
        .map(|i| f(&grid.position(i)[..grid.dim()]))
        .collect();
    WaveField::new(grid, values, 0.0, Formulation::Auxiliary)
}

pub fn sample_real(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<RealField> {
    let values: Vec<f64> = (0..grid.len())
        .map(|i| f(&grid.position(i)[..grid.dim()]))
        .collect();
    RealField::new(grid, values)
}

/// Exact derivative of the trigonometric interpolant along each axis.
pub fn spectral_gradient<F: SpectralField>(field: &F) -> Vec<F> {
    let spectral = Spectral::new(*field.grid());
    spectral
        .gradient(&field.to_complex())
        .into_iter()
        .map(|d| field.with_values(d))
        .collect()
}

pub fn spectral_laplacian<F: SpectralField>(field: &F) -> F {
    let spectral = Spectral::new(*field.grid());
    field.with_values(spectral.laplacian(&field.to_complex()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2,
    Linf,
    /// Sobolev norm with multiplier `(1+|ξ|²)^{s/2}`.
    Hs(f64),
}

pub fn norm<F: SpectralField>(field: &F, kind: NormKind) -> Result<f64> {
    let values = field.to_complex();
    match kind {
        NormKind::L2 => Ok((values.iter().map(|v| v.norm_sqr()).sum::<f64>()
            * field.grid().cell_volume())
        .sqrt()),
        NormKind::Linf => Ok(values.iter().fold(0.0_f64, |m, v| m.max(v.norm()))),
        NormKind::Hs(s) if s < 0.0 => Err(CascadeError::NegativeSobolev(s)),
        NormKind::Hs(s) => Ok(Spectral::new(*field.grid()).sobolev_sq(&values, s).sqrt()),
    }
}

/// Evaluate the trigonometric interpolant of `values` on the tensor grid whose
/// per-axis coordinates are `targets` (one list per axis). Targets must lie in
/// the closed box `[-L, L]`.
pub fn resample(grid: &GridSpec, values: &[C64], targets: &[Vec<f64>]) -> Result<Vec<C64>> {
    if targets.len() != grid.dim() {
        return Err(CascadeError::GridMismatch(format!(
            "{} target axes for a {}-dimensional grid",
            targets.len(),
            grid.dim()
        )));
    }
    let l = grid.half_width();
    let tol = 1e-9 * l;
    for axis in targets {
        if let Some(x) = axis.iter().find(|x| !(x.abs() <= l + tol)) {
            return Err(CascadeError::OutOfRange(format!(
                "resampling point {x} outside reference support [-{l}, {l}]"
            )));
        }
    }
    let n = grid.points();
    let spectral = Spectral::new(*grid);
    let mut coef = values.to_vec();
    spectral.forward(&mut coef);
    let scale = 1.0 / coef.len() as f64;
    coef.iter_mut().for_each(|c| *c *= scale);
    let k = grid.wavenumbers();
    let basis = |xs: &[f64]| -> Vec<C64> {
        let mut e = Vec::with_capacity(xs.len() * n);
        for &x in xs {
            let s = x + l;
            for (m, &km) in k.iter().enumerate() {
                if m == n / 2 {
                    e.push(C64::new((km * s).cos(), 0.0));
                } else {
                    e.push(C64::from_polar(1.0, km * s));
                }
            }
        }
        e
    };
    match grid.dim() {
        1 => {
            let e = basis(&targets[0]);
            Ok(e.chunks(n)
                .map(|row| row.iter().zip(&coef).map(|(a, b)| a * b).sum())
                .collect())
        }
        _ => {
            let e0 = basis(&targets[0]);
            let e1 = basis(&targets[1]);
            let t0 = targets[0].len();
            let t1 = targets[1].len();
            // Contract the first axis: partial[a][m1] = Σ_{m0} e0[a][m0] c[m0][m1].
            let mut partial = vec![C64::new(0.0, 0.0); t0 * n];
            for a in 0..t0 {
                let row = &mut partial[a * n..(a + 1) * n];
                for m0 in 0..n {
                    let w = e0[a * n + m0];
                    let c = &coef[m0 * n..(m0 + 1) * n];
                    for (p, cv) in row.iter_mut().zip(c) {
                        *p += w * cv;
                    }
                }
            }
            let mut out = Vec::with_capacity(t0 * t1);
            for a in 0..t0 {
                let row = &partial[a * n..(a + 1) * n];
                for b in 0..t1 {
                    let e = &e1[b * n..(b + 1) * n];
                    out.push(row.iter().zip(e).map(|(p, w)| p * w).sum());
                }
            }
            Ok(out)
        }
    }
}

/// Resample a field onto the nodes of `target`.
pub fn resample_onto<F: SpectralField>(field: &F, target: &GridSpec) -> Result<Vec<C64>> {
    if field.grid().same_as(target) {
        return Ok(field.to_complex());
    }
    let axes = vec![target.axis_nodes(); target.dim()];
    resample(field.grid(), &field.to_complex(), &axes)
}

const CFD1_MAGIC: &[u8; 8] = b"CFDUMP01";

/// Write `field` in the `CFD1` layout: magic, little-endian `u32` dim and
/// points, `f64` half width and time stamp, `u8` tag, interleaved `(re, im)`.
pub fn write_cfd1<W: Write>(field: &WaveField, mut w: W) -> Result<()> {
    w.write_all(CFD1_MAGIC)?;
    w.write_all(&(field.grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(field.grid.points() as u32).to_le_bytes())?;
    w.write_all(&field.grid.half_width().to_le_bytes())?;
    w.write_all(&field.time.to_le_bytes())?;
    w.write_all(&[field.formulation.tag()])?;
    let mut buf = Vec::with_capacity(field.values.len() * 16);
    for v in &field.values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_cfd1<R: Read>(mut r: R) -> Result<WaveField> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CFD1_MAGIC {
        return Err(CascadeError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let points = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let half_width = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let time = f64::from_le_bytes(b8);
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let grid = GridSpec::new(dim, points, half_width)?;
    let mut raw = vec![0u8; grid.len() * 16];
    r.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    WaveField::new(grid, values, time, Formulation::from_tag(tag[0])?)
}
