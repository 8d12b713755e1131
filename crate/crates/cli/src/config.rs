//! Run configuration: a TOML file with the model parameters and one optional
//! block per subcommand.

use std::path::Path;

use bdcp::ModelParams;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub simulate: Option<SimulateBlock>,
    pub laplace: Option<LaplaceBlock>,
    /// Accepted for schema completeness; the moment report needs only the model.
    #[allow(dead_code)]
    pub moments: Option<MomentsBlock>,
    pub verify: Option<VerifyBlock>,
    pub output: Option<OutputBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub horizon: f64,
    #[serde(default = "one")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "thinning")]
    pub algorithm: String,
    /// Truncation depth for the cluster algorithm.
    #[serde(default = "default_generations")]
    pub generations: usize,
    /// When set, also emit intensity traces sampled on this many grid points.
    pub intensity_points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceBlock {
    #[serde(default)]
    pub v_panel: Vec<(f64, f64)>,
    /// Fixed truncation depth; omit to iterate until `tol`.
    pub n: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

/// The moment report needs nothing beyond the model.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsBlock {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// 0 derives the horizon from the burn-in heuristic.
    #[serde(default)]
    pub horizon: f64,
    /// 0 uses the burn-in heuristic.
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default = "default_panel")]
    pub v_panel: Vec<(f64, f64)>,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default = "default_z_band")]
    pub z_band: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<String>,
    /// Accepted for forward compatibility; csv and json are always written.
    #[allow(dead_code)]
    #[serde(default)]
    pub formats: Vec<String>,
}

fn one() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn thinning() -> String {
    "thinning".into()
}
fn default_generations() -> usize {
    30
}
fn default_tol() -> f64 {
    1e-8
}
fn default_paths() -> usize {
    100_000
}
fn default_panel() -> Vec<(f64, f64)> {
    vec![(0.5, 0.5), (1.0, 1.0)]
}
fn default_z_band() -> f64 {
    4.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| {
            // toml errors carry line/column anchors
            CliError::Config(format!("{}: {e}", path.display()))
        })?;
        config.model.check().map_err(CliError::Model)?;
        Ok(config)
    }
}
