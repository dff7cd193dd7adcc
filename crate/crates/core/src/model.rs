//! Scalar parameters of the focusing problem and the nonlinearity `f`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{CascadeError, Result};
use crate::grid::{norm, spectral_gradient, Formulation, NormKind, WaveField, C64};

/// Below this conformal time the coefficient `t^{-2} f(t^n y)` is replaced by
/// its leading Taylor term `t^{n-2} y f'(0)`.
pub const T_TINY: f64 = 1e-8;

/// `ε`, `k`, `n`, `σ` together with every derived exponent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PhysParams {
    pub eps: f64,
    pub k: f64,
    pub n_dim: usize,
    pub sigma: u32,
    /// `kσ`
    pub alpha: f64,
    /// `k/n`
    pub gamma: f64,
    /// First boundary-layer exponent `(α-1)/(nσ-1)`; NaN when `nσ = 1`.
    pub beta: f64,
    /// Conformal semiclassical parameter `ε^{1-γ}`.
    pub hbar: f64,
    /// Conformal start time `ħ^{γ/(1-γ)} = ε^γ`.
    pub t0: f64,
    pub supercritical: bool,
}

pub fn make_params(eps: f64, k: f64, n_dim: usize, sigma: u32) -> Result<PhysParams> {
    build(eps, k, n_dim, sigma, false)
}

/// Like [`make_params`] but accepts `k >= n` (critical and subcritical runs).
pub fn make_params_unchecked(eps: f64, k: f64, n_dim: usize, sigma: u32) -> Result<PhysParams> {
    build(eps, k, n_dim, sigma, true)
}

fn build(eps: f64, k: f64, n_dim: usize, sigma: u32, allow_critical: bool) -> Result<PhysParams> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(CascadeError::InvalidParams(format!(
            "eps = {eps} not in (0, 1]"
        )));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(CascadeError::InvalidParams(format!(
            "k = {k} must be positive"
        )));
    }
    if n_dim == 0 || sigma == 0 {
        return Err(CascadeError::InvalidParams(
            "n_dim and sigma must be >= 1".into(),
        ));
    }
    let n = n_dim as f64;
    if k >= n && !allow_critical {
        return Err(CascadeError::NotSupercritical { k, n: n_dim });
    }
    let gamma = k / n;
    let alpha = k * sigma as f64;
    let n_sigma = n * sigma as f64;
    let beta = if n_sigma == 1.0 {
        f64::NAN
    } else {
        (alpha - 1.0) / (n_sigma - 1.0)
    };
    let hbar = eps.powf(1.0 - gamma);
    let t0 = eps.powf(gamma);
    if n_dim < 2 {
        log::warn!("n_dim = {n_dim}: outside the supported range (n >= 2); debugging use only");
    }
    Ok(PhysParams {
        eps,
        k,
        n_dim,
        sigma,
        alpha,
        gamma,
        beta,
        hbar,
        t0,
        supercritical: n > k && k > 1.0,
    })
}

impl PhysParams {
    /// Parameters whose conformal problem has semiclassical constant `hbar`.
    pub fn from_hbar(hbar: f64, k: f64, n_dim: usize, sigma: u32) -> Result<Self> {
        let gamma = k / n_dim as f64;
        if gamma >= 1.0 {
            return Err(CascadeError::NotSupercritical { k, n: n_dim });
        }
        let mut p = make_params(hbar.powf(1.0 / (1.0 - gamma)), k, n_dim, sigma)?;
        p.hbar = hbar;
        p.t0 = hbar.powf(gamma / (1.0 - gamma));
        Ok(p)
    }

    /// Same `(k, n, σ)` at another `ε`.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        build(eps, self.k, self.n_dim, self.sigma, true)
    }

    /// `(jα - 1)/(jnσ - 1)`
    pub fn layer_exponent(&self, j: usize) -> f64 {
        layer_exponent(self, j)
    }

    /// Conformal time `ε^γ/(1-t)` of physical time `t`.
    pub fn conformal_time(&self, t: f64) -> f64 {
        self.t0 / (1.0 - t)
    }

    /// Physical time whose conformal image is `tau`.
    pub fn physical_time(&self, tau: f64) -> f64 {
        1.0 - self.t0 / tau
    }

    /// `(γ + s(α-1))/(1 + s(n-1))`, the predicted divergence exponent family.
    pub fn omega(&self, s: f64) -> f64 {
        (self.gamma + s * (self.alpha - 1.0)) / (1.0 + s * (self.n_dim as f64 - 1.0))
    }
}

pub fn layer_exponent(params: &PhysParams, j: usize) -> f64 {
    let j = j as f64;
    (j * params.alpha - 1.0) / (j * params.n_dim as f64 * params.sigma as f64 - 1.0)
}

/// Initial amplitude `a₀` as a pointwise function of position.
pub type Amplitude = Arc<dyn Fn(&[f64]) -> C64 + Send + Sync>;

/// The unit Gaussian `e^{-|x|²/2}`.
pub fn unit_gaussian() -> Amplitude {
    Arc::new(|x: &[f64]| C64::new((-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp(), 0.0))
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The function `f` with two derivatives and `F(y) = ∫_0^y f(η²) η dη`.
#[derive(Clone)]
pub struct Nonlinearity {
    f: ScalarFn,
    f_prime: ScalarFn,
    f_second: ScalarFn,
    antideriv: ScalarFn,
    label: String,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(fm, "Nonlinearity({})", self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinNl {
    Cubic,
    SaturatedCubic,
}

impl FromStr for BuiltinNl {
    type Err = CascadeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic" => Ok(BuiltinNl::Cubic),
            "saturated_cubic" => Ok(BuiltinNl::SaturatedCubic),
            other => Err(CascadeError::UnknownNonlinearity(other.to_string())),
        }
    }
}

pub fn builtin_nonlinearity(which: BuiltinNl) -> Nonlinearity {
    match which {
        BuiltinNl::Cubic => Nonlinearity::cubic(),
        BuiltinNl::SaturatedCubic => Nonlinearity::saturated_cubic(),
    }
}

impl Nonlinearity {
    /// `f(y) = y`
    pub fn cubic() -> Self {
        Self::homogeneous(1)
    }

    /// `f(y) = y/(1+y)`
    pub fn saturated_cubic() -> Self {
        Self {
            f: Arc::new(|y| y / (1.0 + y)),
            f_prime: Arc::new(|y| (1.0 + y).powi(-2)),
            f_second: Arc::new(|y| -2.0 * (1.0 + y).powi(-3)),
            antideriv: Arc::new(|y| {
                let w = y * y;
                0.5 * (w - w.ln_1p())
            }),
            label: "saturated_cubic".into(),
        }
    }

    /// `f(y) = y^σ`
    pub fn homogeneous(sigma: u32) -> Self {
        let s = sigma as i32;
        let label = if sigma == 1 {
            "cubic".to_string()
        } else {
            format!("power_{sigma}")
        };
        Self {
            f: Arc::new(move |y| y.powi(s)),
            f_prime: Arc::new(move |y| {
                if s == 1 {
                    1.0
                } else {
                    s as f64 * y.powi(s - 1)
                }
            }),
            f_second: Arc::new(move |y| match s {
                1 => 0.0,
                2 => 2.0,
                _ => (s * (s - 1)) as f64 * y.powi(s - 2),
            }),
            antideriv: Arc::new(move |y| y.powi(2 * s + 2) / (2 * s + 2) as f64),
            label,
        }
    }

    /// `f ≡ 0`, used for the linear baselines. It is not a valid defocusing
    /// nonlinearity and bypasses the positivity check.
    pub fn zero() -> Self {
        Self {
            f: Arc::new(|_| 0.0),
            f_prime: Arc::new(|_| 0.0),
            f_second: Arc::new(|_| 0.0),
            antideriv: Arc::new(|_| 0.0),
            label: "zero".into(),
        }
    }

    /// User-supplied nonlinearity, validated on `[0, y_max]`.
    pub fn custom(
        label: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_second: impl Fn(f64) -> f64 + Send + Sync + 'static,
        antideriv: impl Fn(f64) -> f64 + Send + Sync + 'static,
        y_max: f64,
    ) -> Result<Self> {
        let nl = Self {
            f: Arc::new(f),
            f_prime: Arc::new(f_prime),
            f_second: Arc::new(f_second),
            antideriv: Arc::new(antideriv),
            label: label.to_string(),
        };
        nl.validate(y_max)?;
        Ok(nl)
    }

    /// `f(0) = 0`, `f' > 0` and the finite-difference derivative check on a
    /// 201-point lattice of `[0, y_max]`.
    pub fn validate(&self, y_max: f64) -> Result<()> {
        if self.f(0.0) != 0.0 {
            return Err(CascadeError::NonlinearityCheck(format!(
                "f(0) = {} != 0",
                self.f(0.0)
            )));
        }
        let h = 1e-5;
        for i in 0..=200 {
            let y = y_max * i as f64 / 200.0;
            let d = self.f_prime(y);
            if !(d > 0.0) {
                return Err(CascadeError::NonlinearityCheck(format!(
                    "f'({y}) = {d} is not positive"
                )));
            }
            if y >= h {
                let fd = (self.f(y + h) - self.f(y - h)) / (2.0 * h);
                if (fd - d).abs() > 1e-6 {
                    return Err(CascadeError::NonlinearityCheck(format!(
                        "f' disagrees with finite differences at y = {y}: {d} vs {fd}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_zero(&self) -> bool {
        self.label == "zero"
    }

    pub fn f(&self, y: f64) -> f64 {
        (self.f)(y)
    }

    pub fn f_prime(&self, y: f64) -> f64 {
        (self.f_prime)(y)
    }

    pub fn f_second(&self, y: f64) -> f64 {
        (self.f_second)(y)
    }

    pub fn antideriv(&self, y: f64) -> f64 {
        (self.antideriv)(y)
    }

    /// Conformal potential `t^{-2} f(t^n y)` with its `t → 0` extension.
    pub fn conformal_potential(&self, t: f64, n_dim: usize, y: f64) -> f64 {
        if t < T_TINY {
            t.powi(n_dim as i32 - 2) * y * self.f_prime(0.0)
        } else {
            self.f(t.powi(n_dim as i32) * y) / (t * t)
        }
    }

    /// `t^{n-2} f'(t^n y)`, the sound-speed coefficient of the velocity form.
    pub fn conformal_stiffness(&self, t: f64, n_dim: usize, y: f64) -> f64 {
        let tn = if t < T_TINY {
            0.0
        } else {
            t.powi(n_dim as i32)
        };
        t.powi(n_dim as i32 - 2) * self.f_prime(tn * y)
    }
}

/// `½‖ε∇u‖² + 2ε^{-k} ∫ F(ε^{k/2}|u|)` for a physical-frame field, the
/// Hamiltonian of `iεu_t + ½ε²Δu = f(ε^k|u|²)u`. With `F(y) = ∫₀^y f(η²)η dη`
/// the potential density is `½∫₀^{|u|²} f(ε^k s) ds = ε^{-k}·2F(ε^{k/2}|u|)`;
/// for `f(y) = y` that is `ε^k|u|⁴/2`.
pub fn energy(field: &WaveField, params: &PhysParams, nl: &Nonlinearity) -> Result<f64> {
    if field.formulation != Formulation::PhysicalU {
        return Err(CascadeError::WrongFormulation {
            expected: Formulation::PhysicalU,
            found: field.formulation,
        });
    }
    let kinetic: f64 = spectral_gradient(field)
        .iter()
        .map(|d| norm(d, NormKind::L2).map(|v| v * v))
        .sum::<Result<f64>>()?;
    let kinetic = 0.5 * params.eps * params.eps * kinetic;
    let scale = params.eps.powf(params.k / 2.0);
    let potential: f64 = 2.0
        * field
            .values
            .iter()
            .map(|u| nl.antideriv(scale * u.norm()))
            .sum::<f64>()
        * field.grid.cell_volume()
        / params.eps.powf(params.k);
    Ok(kinetic + potential)
}
