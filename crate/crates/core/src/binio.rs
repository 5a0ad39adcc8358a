//! Raw little-endian payload files shared by the dataset, rollout and damage
//! outputs. Fields are written row-major with the y index outermost.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// `std::fs::read` with the path folded into any error message.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| with_path(e, path).into())
}

pub fn with_path(e: std::io::Error, path: &Path) -> std::io::Error {
    std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| with_path(e, path))?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Reads exactly `expected` values, reporting a corrupt dataset otherwise.
pub fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = read_bytes(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::corrupt(
            path,
            format!("payload holds {} bytes, expected {} ({} f32 values)", bytes.len(), expected * 4, expected),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_u8(path: &Path, values: &[u8]) -> Result<()> {
    std::fs::write(path, values)?;
    Ok(())
}

pub fn read_u8(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    if bytes.len() != expected {
        return Err(Error::corrupt(
            path,
            format!("payload holds {} bytes, expected {expected}", bytes.len()),
        ));
    }
    Ok(bytes)
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::corrupt(path, e.to_string()))
}
