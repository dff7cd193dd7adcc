//! One module per experiment; each exposes `run(&ExperimentConfig) -> Outcome`.

pub mod cascade_layers;
pub mod grenier_convergence;
pub mod instability;
pub mod linear_layer;
pub mod main_theorem;
pub mod series_orders;
pub mod simulate;

use anyhow::Result;
use cascade_core::model::{make_params, PhysParams};

use crate::config::ExperimentConfig;

pub(crate) fn params_at(cfg: &ExperimentConfig, eps: f64) -> Result<PhysParams> {
    Ok(make_params(eps, cfg.k, cfg.n_dim, cfg.sigma)?)
}
