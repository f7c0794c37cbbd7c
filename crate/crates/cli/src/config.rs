//! Experiment configuration: one UTF-8 JSON document with optional sections
//! per command. Unknown keys are rejected everywhere.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crsae_core::{NoiseConvention, SimConfig, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub sim: Option<SimSection>,
    #[serde(default)]
    pub fista: Option<FistaSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub recording: SimConfig,
    /// Allowed pairwise inner-product range for generated filters.
    pub correlation_range: [f64; 2],
    /// Explicit train/val/test window counts; defaults to a 63:7:2 split.
    #[serde(default)]
    pub split: Option<[usize; 3]>,
}

/// How the FISTA step constant is obtained.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzSpec {
    /// Power iteration on the initial dictionary.
    Auto,
    Fixed(f64),
}

/// How λ is obtained.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSpec {
    Fixed(f64),
    /// σ̂ √(2 ln(C·N_e)) scaled; σ̂ estimated from training residuals against
    /// the initial dictionary under the chosen convention.
    Heuristic {
        scale: f64,
        convention: NoiseConvention,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FistaSection {
    pub iterations: usize,
    pub lipschitz: LipschitzSpec,
    pub lambda: LambdaSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: TrainConfig,
    /// Recovery-error band for `--init perturbed`.
    #[serde(default = "default_init_err_range")]
    pub init_err_range: [f64; 2],
    #[serde(default)]
    pub lcsc: Option<LcscSection>,
}

fn default_init_err_range() -> [f64; 2] {
    [0.4, 0.5]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcscSection {
    #[serde(default = "default_ista_iterations")]
    pub ista_iterations: usize,
    #[serde(default = "default_train_lambda")]
    pub train_lambda: bool,
    /// Separate λ learning rate; λ lives on a much larger scale than filter
    /// entries.
    #[serde(default)]
    pub lambda_lr: Option<f64>,
}

fn default_ista_iterations() -> usize {
    3
}
fn default_train_lambda() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub snr_grid_db: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Optional override of max_epochs for sweep cells.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub max_shift: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes =
            fs::read(path).with_context(|| format!("read config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_slice(&bytes)
            .with_context(|| format!("parse config {}", path.display()))?;
        Ok((cfg, bytes))
    }

    pub fn require_sim(&self) -> Result<&SimSection> {
        match &self.sim {
            Some(s) => Ok(s),
            None => bail!("config is missing the \"sim\" section"),
        }
    }

    pub fn require_fista(&self) -> Result<&FistaSection> {
        match &self.fista {
            Some(s) => Ok(s),
            None => bail!("config is missing the \"fista\" section"),
        }
    }

    pub fn require_train(&self) -> Result<&TrainSection> {
        match &self.train {
            Some(s) => Ok(s),
            None => bail!("config is missing the \"train\" section"),
        }
    }

    pub fn require_sweep(&self) -> Result<&SweepSection> {
        match &self.sweep {
            Some(s) => Ok(s),
            None => bail!("config is missing the \"sweep\" section"),
        }
    }
}

/// Hex SHA-256 of the raw config bytes; recorded in every manifest.
pub fn config_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// 63:7:2 split (the experiment default), rounding train and val and giving
/// the remainder to test.
pub fn default_split(total: usize) -> [usize; 3] {
    let train = ((total as f64) * 63.0 / 72.0).round() as usize;
    let val = ((total as f64) * 7.0 / 72.0).round() as usize;
    let test = total.saturating_sub(train + val);
    [train, val, test]
}
