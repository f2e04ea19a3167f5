//! Binary weight format.
//!
//! Layout, all little-endian: magic `SPWM`, version `u16`, rows `u32`, cols
//! `u32`, bias flag byte, `rows·cols` row-major `f64`, then `cols` bias values
//! when the flag is 1.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::WeightMatrix;

pub const MAGIC: &[u8; 4] = b"SPWM";
pub const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 4 + 4 + 1;

pub fn encode(w: &Array2<f64>, bias: Option<&Array1<f64>>) -> Result<Vec<u8>> {
    let (rows, cols) = w.dim();
    if let Some(b) = bias {
        if b.len() != cols {
            return Err(Error::validation("bias length does not match column count"));
        }
    }
    let rows32 = u32::try_from(rows).map_err(|_| Error::validation("too many rows"))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::validation("too many columns"))?;
    let mut out = Vec::with_capacity(HEADER + 8 * (rows * cols + bias.map_or(0, |b| b.len())));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&cols32.to_le_bytes());
    out.push(u8::from(bias.is_some()));
    for r in 0..rows {
        for c in 0..cols {
            out.extend_from_slice(&w[[r, c]].to_le_bytes());
        }
    }
    if let Some(b) = bias {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
    let bad = |reason: String| Error::Format {
        path: origin.to_string(),
        reason,
    };
    if bytes.len() < HEADER || &bytes[0..4] != MAGIC {
        return Err(bad("missing SPWM header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let flag = bytes[14];
    if flag > 1 {
        return Err(bad(format!("invalid bias flag {flag}")));
    }
    let expected = HEADER + 8 * rows * cols + if flag == 1 { 8 * cols } else { 0 };
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut vals = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let w = Array2::from_shape_vec((rows, cols), vals.by_ref().take(rows * cols).collect())
        .map_err(|e| bad(e.to_string()))?;
    let bias = (flag == 1).then(|| vals.collect::<Array1<f64>>());
    Ok((w, bias))
}

pub fn write(path: &Path, w: &Array2<f64>, bias: Option<&Array1<f64>>) -> Result<()> {
    let bytes = encode(w, bias)?;
    write_atomic(path, &bytes)
}

pub fn read(path: &Path) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn write_weights(path: &Path, model: &WeightMatrix) -> Result<()> {
    write(path, &model.w, Some(&model.b))
}

/// Weights with a zero bias when the file carries none.
pub fn read_weights(path: &Path) -> Result<WeightMatrix> {
    let (w, b) = read(path)?;
    match b {
        Some(b) => WeightMatrix::new(w, b),
        None => WeightMatrix::from_w(w),
    }
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
