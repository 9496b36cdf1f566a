//! Point and distance files, plus the JSON pose description.
//!
//! ```text
//! points:    "AVSP" | u32 version=1 | u64 N | N × 3 × f32
//! distances: "AVSD" | u32 version=1 | u64 N | N × f32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body::{PoseParams, ShapeParams, Vec3, BETA_LEN};
use crate::error::{Error, Result};

pub const POINTS_MAGIC: &[u8; 4] = b"AVSP";
pub const SDF_MAGIC: &[u8; 4] = b"AVSD";
pub const FILE_VERSION: u32 = 1;
pub const POSE_SCHEMA_VERSION: u32 = 1;

fn encode(magic: &[u8; 4], n: usize, values: impl Iterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 12 * n);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(magic: &[u8; 4], bytes: &[u8], width: usize) -> Result<Vec<f32>> {
    let name = String::from_utf8_lossy(magic);
    if bytes.len() < 16 || &bytes[..4] != magic {
        return Err(Error::Format(format!("not an {name} file")));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FILE_VERSION {
        return Err(Error::Format(format!(
            "unsupported {name} version {version}"
        )));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let expected = usize::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(4 * width))
        .and_then(|b| b.checked_add(16))
        .ok_or_else(|| Error::Format(format!("{name} count {n} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{name} file holds {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    Ok(bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn encode_points(points: &[[f32; 3]]) -> Vec<u8> {
    encode(POINTS_MAGIC, points.len(), points.iter().flatten().copied())
}

pub fn decode_points(bytes: &[u8]) -> Result<Vec<[f32; 3]>> {
    Ok(decode(POINTS_MAGIC, bytes, 3)?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect())
}

pub fn encode_sdf(values: &[f32]) -> Vec<u8> {
    encode(SDF_MAGIC, values.len(), values.iter().copied())
}

pub fn decode_sdf_values(bytes: &[u8]) -> Result<Vec<f32>> {
    decode(SDF_MAGIC, bytes, 1)
}

pub fn write_points(path: impl AsRef<Path>, points: &[Vec3]) -> Result<()> {
    let pts: Vec<[f32; 3]> = points.iter().map(|p| p.map(|v| v as f32)).collect();
    std::fs::write(path, encode_points(&pts))?;
    Ok(())
}

pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<[f32; 3]>> {
    decode_points(&std::fs::read(path)?)
}

pub fn read_sdf_values(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    decode_sdf_values(&std::fs::read(path)?)
}

/// A named body configuration stored as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub beta: [f64; BETA_LEN],
    pub theta: PoseParams,
}

impl PoseFile {
    pub fn shape(&self) -> Result<ShapeParams> {
        ShapeParams::new(self.beta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let pose: PoseFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if pose.schema_version != POSE_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported pose schema version {}",
                pose.schema_version
            )));
        }
        pose.theta.validate()?;
        Ok(pose)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_and_values_round_trip() {
        let pts = vec![[1.0, -2.5, 3.25], [f32::MIN_POSITIVE, 0.0, -0.0]];
        assert_eq!(decode_points(&encode_points(&pts)).unwrap(), pts);
        let vals = vec![0.5, -1e-7, 42.0];
        assert_eq!(decode_sdf_values(&encode_sdf(&vals)).unwrap(), vals);
        assert_eq!(encode_points(&[]).len(), 16);
    }

    #[test]
    fn malformed_files_are_format_errors() {
        let mut bytes = encode_points(&[[1.0, 2.0, 3.0]]);
        assert!(matches!(decode_sdf_values(&bytes), Err(Error::Format(_))));
        bytes.pop();
        assert!(matches!(decode_points(&bytes), Err(Error::Format(_))));
        let mut forged = encode_sdf(&[1.0]);
        forged[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_sdf_values(&forged), Err(Error::Format(_))));
    }
}
