//! TOML experiment configuration and its content hash.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cascade_core::grid::GridSpec;
use cascade_core::model::{builtin_nonlinearity, BuiltinNl, Nonlinearity};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    LinearLayer,
    CascadeLayers,
    MainTheorem,
    InstabilityScan,
    GrenierConvergence,
    SeriesOrders,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::LinearLayer => "linear_layer",
            ExperimentKind::CascadeLayers => "cascade_layers",
            ExperimentKind::MainTheorem => "main_theorem",
            ExperimentKind::InstabilityScan => "instability_scan",
            ExperimentKind::GrenierConvergence => "grenier_convergence",
            ExperimentKind::SeriesOrders => "series_orders",
        }
    }
}

fn default_k() -> f64 {
    1.5
}
fn default_n_dim() -> usize {
    2
}
fn default_sigma() -> u32 {
    1
}
fn default_nl() -> BuiltinNl {
    BuiltinNl::Cubic
}
fn default_n_terms() -> usize {
    2
}
fn default_seed() -> u64 {
    20_240_601
}
fn default_tail_limit() -> f64 {
    1e-6
}

/// One experiment. Fields an experiment does not use are ignored by it; the
/// ones it needs but are absent fall back to the experiment's desk defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_n_dim")]
    pub n_dim: usize,
    #[serde(default = "default_sigma")]
    pub sigma: u32,
    #[serde(default = "default_nl")]
    pub nl: BuiltinNl,
    pub points: Option<usize>,
    pub half_width: Option<f64>,
    /// Decreasing.
    #[serde(default)]
    pub eps_list: Vec<f64>,
    /// Increasing; each `Λ` must satisfy `1/Λ <= T_used`.
    #[serde(default)]
    pub lambda_list: Vec<f64>,
    /// Decreasing.
    #[serde(default)]
    pub hbar_list: Vec<f64>,
    /// Values of `1-t` (linear layer), decreasing.
    #[serde(default)]
    pub layer_list: Vec<f64>,
    /// Time samples for the small-time series fits.
    #[serde(default)]
    pub t_samples: Vec<f64>,
    /// ε values run for information only; they never affect PASS/FAIL.
    #[serde(default)]
    pub supplementary_eps_list: Vec<f64>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    #[serde(default = "default_n_terms")]
    pub n_terms: usize,
    pub horizon: Option<f64>,
    #[serde(default = "default_tail_limit")]
    pub tail_limit: f64,
    pub scan_points: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: Option<String>,
}

fn strictly(values: &[f64], increasing: bool) -> bool {
    values
        .windows(2)
        .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

impl ExperimentConfig {
    pub fn minimal(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            k: default_k(),
            // The layer law is dimension-generic; its desk default is 1D.
            n_dim: if experiment == ExperimentKind::LinearLayer {
                1
            } else {
                default_n_dim()
            },
            sigma: default_sigma(),
            nl: default_nl(),
            points: None,
            half_width: None,
            eps_list: Vec::new(),
            lambda_list: Vec::new(),
            hbar_list: Vec::new(),
            layer_list: Vec::new(),
            t_samples: Vec::new(),
            supplementary_eps_list: Vec::new(),
            dt: None,
            steps: None,
            n_terms: default_n_terms(),
            horizon: None,
            tail_limit: default_tail_limit(),
            scan_points: None,
            seed: default_seed(),
            output_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if !strictly(&self.eps_list, false) || !strictly(&self.supplementary_eps_list, false) {
            bail!("eps lists must be strictly decreasing");
        }
        if !strictly(&self.lambda_list, true) {
            bail!("lambda_list must be strictly increasing");
        }
        if !strictly(&self.hbar_list, false) || !strictly(&self.layer_list, false) {
            bail!("hbar_list and layer_list must be strictly decreasing");
        }
        let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.eps_list) || !positive(&self.hbar_list) || !positive(&self.lambda_list) {
            bail!("eps, hbar and lambda values must be positive");
        }
        if self.layer_list.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            bail!("layer widths 1-t must lie in (0, 1]");
        }
        if matches!(self.dt, Some(dt) if !(dt > 0.0)) {
            bail!("dt must be positive");
        }
        if !(self.tail_limit > 0.0) {
            bail!("tail_limit must be positive");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 digits.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        builtin_nonlinearity(self.nl)
    }

    pub fn grid_or(&self, points: usize, half_width: f64) -> Result<GridSpec> {
        Ok(GridSpec::new(
            self.n_dim,
            self.points.unwrap_or(points),
            self.half_width.unwrap_or(half_width),
        )?)
    }

    pub fn eps_or(&self, fallback: &[f64]) -> Vec<f64> {
        if self.eps_list.is_empty() {
            fallback.to_vec()
        } else {
            self.eps_list.clone()
        }
    }
}
