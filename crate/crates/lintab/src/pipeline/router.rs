//! Conditional model selection.
//!
//! Three checkpoints cover the dataset landscape: a long-context model
//! for big low-dimensional tables, a wide model for high-dimensional
//! tables (with a seeded random projection once even its capacity is
//! exceeded), and a small default. Selection looks only at the table's
//! row and feature counts, in a fixed branch order.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Which checkpoint handles a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    /// Small default: up to 100 features.
    S100,
    /// Long-context variant: many rows, up to 100 features.
    L100,
    /// High-dimensional variant: up to 1000 features.
    H1k,
    /// High-dimensional variant behind a random projection to its
    /// feature cap.
    H1kWithProjection,
}

impl std::fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelChoice::S100 => "s100",
            ModelChoice::L100 => "l100",
            ModelChoice::H1k => "h1k",
            ModelChoice::H1kWithProjection => "h1k+projection",
        };
        f.write_str(s)
    }
}

/// Thresholds of the selection rule plus the checkpoint locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    /// Row count at or above which a table counts as large.
    pub n_threshold: usize,
    /// Feature count above which a table counts as high-dimensional.
    pub d_threshold: usize,
    /// `d/n` at or above which a table counts as wide relative to its
    /// size.
    pub ratio_threshold: f64,
    /// Feature capacity of the high-dimensional model; wider tables get
    /// the random projection.
    pub h1k_feature_cap: usize,
    /// Seed of that projection (recorded so runs reproduce).
    pub projection_seed: u64,
    pub s100_path: Option<PathBuf>,
    pub l100_path: Option<PathBuf>,
    pub h1k_path: Option<PathBuf>,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            n_threshold: 3000,
            d_threshold: 100,
            ratio_threshold: 0.2,
            h1k_feature_cap: 1000,
            projection_seed: 0,
            s100_path: None,
            l100_path: None,
            h1k_path: None,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_threshold == 0 || self.d_threshold == 0 || self.h1k_feature_cap == 0 {
            return Err(Error::contract("router thresholds must be positive"));
        }
        if !(self.ratio_threshold.is_finite() && self.ratio_threshold > 0.0) {
            return Err(Error::contract("ratio threshold must be positive"));
        }
        Ok(())
    }
}

/// Pick the model for a table of `n` rows and `d` features.
///
/// Branches are evaluated in exactly this order:
/// 1. large and narrow (`n >= n_threshold` and `d <= d_threshold`) —
///    the long-context model;
/// 2. high-dimensional (`d > d_threshold`), or wide relative to size
///    (`d/n >= ratio_threshold` and `n >= n_threshold`) — the
///    high-dimensional model, behind a projection when `d` exceeds its
///    feature cap;
/// 3. everything else — the small default.
pub fn select_model(n: usize, d: usize, config: &RouterConfig) -> Result<ModelChoice> {
    config.validate()?;
    if n == 0 || d == 0 {
        return Err(Error::contract("routing needs n >= 1 and d >= 1"));
    }
    if n >= config.n_threshold && d <= config.d_threshold {
        Ok(ModelChoice::L100)
    } else if d > config.d_threshold
        || (d as f64 / n as f64 >= config.ratio_threshold && n >= config.n_threshold)
    {
        if d <= config.h1k_feature_cap {
            Ok(ModelChoice::H1k)
        } else {
            Ok(ModelChoice::H1kWithProjection)
        }
    } else {
        Ok(ModelChoice::S100)
    }
}
