//! On-disk dataset layout produced by `simulate` and consumed by `train`:
//! tensors for filters/windows/codes plus a JSON manifest carrying the seed,
//! the achieved SNR, and the config echo needed to reproduce the files.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crsae_core::{CodeMatrix, FilterBank, SignalWindow};

use crate::config::SimSection;
use crate::tensor_file::{read_tensor, write_atomic, write_tensor};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub sim: SimSection,
    pub seed: u64,
    pub achieved_snr_db: f64,
    /// Noise standard deviation per electrode (they differ slightly when a
    /// target SNR is requested).
    pub sigmas: Vec<f64>,
    pub counts: SplitCounts,
    pub total_windows: usize,
    pub files: Vec<String>,
}

pub struct Dataset {
    pub manifest: DatasetManifest,
    pub true_filters: FilterBank,
    pub train_windows: Vec<SignalWindow>,
    pub val_windows: Vec<SignalWindow>,
    pub test_windows: Vec<SignalWindow>,
    pub train_codes: Vec<CodeMatrix>,
    pub val_codes: Vec<CodeMatrix>,
    pub test_codes: Vec<CodeMatrix>,
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(manifest)?;
    write_atomic(&dir.join(MANIFEST_NAME), &bytes)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_NAME);
    let bytes = fs::read(&path).with_context(|| format!("read {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_filter_bank(path: &Path, bank: &FilterBank) -> Result<()> {
    write_tensor(
        path,
        &[bank.filter_count() as u64, bank.filter_len() as u64],
        bank.as_slice(),
    )
}

pub fn read_filter_bank(path: &Path) -> Result<FilterBank> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 2 {
        bail!("{}: expected a rank-2 filter tensor, got rank {}", path.display(), dims.len());
    }
    Ok(FilterBank::from_flat(dims[0] as usize, dims[1] as usize, data)?)
}

pub fn write_windows(path: &Path, windows: &[SignalWindow]) -> Result<()> {
    let w = windows.first().map_or(0, SignalWindow::len);
    let mut flat = Vec::with_capacity(windows.len() * w);
    for win in windows {
        flat.extend_from_slice(win.samples());
    }
    write_tensor(path, &[windows.len() as u64, w as u64], &flat)
}

pub fn read_windows(path: &Path) -> Result<Vec<SignalWindow>> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 2 {
        bail!("{}: expected a rank-2 window tensor", path.display());
    }
    let (n, w) = (dims[0] as usize, dims[1] as usize);
    (0..n)
        .map(|j| Ok(SignalWindow::new(data[j * w..(j + 1) * w].to_vec(), j)?))
        .collect()
}

pub fn write_codes(path: &Path, codes: &[CodeMatrix]) -> Result<()> {
    let (c, ne) = codes
        .first()
        .map_or((0, 0), |m| (m.channels(), m.positions()));
    let mut flat = Vec::with_capacity(codes.len() * c * ne);
    for code in codes {
        flat.extend_from_slice(code.as_slice());
    }
    write_tensor(path, &[codes.len() as u64, c as u64, ne as u64], &flat)
}

pub fn read_codes(path: &Path) -> Result<Vec<CodeMatrix>> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 3 {
        bail!("{}: expected a rank-3 code tensor", path.display());
    }
    let (n, c, ne) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    (0..n)
        .map(|j| Ok(CodeMatrix::from_flat(c, ne, data[j * c * ne..(j + 1) * c * ne].to_vec())?))
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    Ok(Dataset {
        true_filters: read_filter_bank(&dir.join("true_filters.tf"))?,
        train_windows: read_windows(&dir.join("train_windows.tf"))?,
        val_windows: read_windows(&dir.join("val_windows.tf"))?,
        test_windows: read_windows(&dir.join("test_windows.tf"))?,
        train_codes: read_codes(&dir.join("train_codes.tf"))?,
        val_codes: read_codes(&dir.join("val_codes.tf"))?,
        test_codes: read_codes(&dir.join("test_codes.tf"))?,
        manifest,
    })
}
