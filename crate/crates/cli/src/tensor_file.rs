//! Raw binary tensor container: magic "CRSAE1\n", a dtype tag (1 =
//! little-endian f64), a rank byte, rank u64 dims, then the row-major
//! payload. Bit-exact round trips, including signed zeros, denormals, and
//! NaN payloads.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const TENSOR_MAGIC: &[u8; 7] = b"CRSAE1\n";
const DTYPE_F64_LE: u8 = 1;

/// Writes atomically: a temporary file in the same directory, then rename.
pub fn write_tensor(path: &Path, dims: &[u64], data: &[f64]) -> Result<()> {
    let expected: u64 = dims.iter().product();
    if expected != data.len() as u64 {
        bail!(
            "tensor dims {:?} imply {} values, got {}",
            dims,
            expected,
            data.len()
        );
    }
    if dims.len() > u8::MAX as usize {
        bail!("tensor rank {} exceeds 255", dims.len());
    }
    let mut buf = Vec::with_capacity(9 + 8 * dims.len() + 8 * data.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.push(DTYPE_F64_LE);
    buf.push(dims.len() as u8);
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &buf)
}

pub fn read_tensor(path: &Path) -> Result<(Vec<u64>, Vec<f64>)> {
    let mut file = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut header = [0u8; 9];
    file.read_exact(&mut header)
        .with_context(|| format!("short tensor header in {}", path.display()))?;
    if &header[..7] != TENSOR_MAGIC {
        bail!("{}: bad magic", path.display());
    }
    if header[7] != DTYPE_F64_LE {
        bail!("{}: unsupported dtype tag {}", path.display(), header[7]);
    }
    let rank = header[8] as usize;
    let mut dim_bytes = vec![0u8; 8 * rank];
    file.read_exact(&mut dim_bytes)?;
    let dims: Vec<u64> = dim_bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let count: u64 = dims.iter().product();
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() as u64 != 8 * count {
        bail!(
            "{}: payload holds {} bytes, dims {:?} require {}",
            path.display(),
            payload.len(),
            dims,
            8 * count
        );
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

/// Write-temp-then-rename so concurrent readers never observe a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tensor".into());
    let tmp = path.with_file_name(format!("{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("create {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("rename into {}", path.display()))?;
    Ok(())
}
