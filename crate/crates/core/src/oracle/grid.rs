//! Dense distance grids over the body's world bounds.
//!
//! Layout: magic `AVSG`, u32 version, u32 resolution, 6 × f32 bounds
//! (min xyz, max xyz), then `r³` f32 values with x varying fastest. Samples
//! sit at cell centers; their coordinates are rounded to f32 so the same
//! points can be written to a points file and re-queried exactly.

use std::path::Path;

use crate::body::{BodyState, Vec3};
use crate::error::{invalid, Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"AVSG";
pub const GRID_VERSION: u32 = 1;
pub const GRID_HEADER_BYTES: usize = 4 + 4 + 4 + 6 * 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub resolution: usize,
    pub min: [f32; 3],
    pub max: [f32; 3],
    pub values: Vec<f32>,
}

fn check_resolution(r: usize) -> Result<()> {
    if !(8..=512).contains(&r) {
        return Err(invalid(format!(
            "grid resolution must be in [8, 512], got {r}"
        )));
    }
    Ok(())
}

/// Cell-center sample points, x fastest.
pub fn grid_points(min: [f32; 3], max: [f32; 3], resolution: usize) -> Vec<Vec3> {
    let coord = |axis: usize, i: usize| -> f64 {
        let lo = min[axis] as f64;
        let step = (max[axis] as f64 - lo) / resolution as f64;
        (lo + (i as f64 + 0.5) * step) as f32 as f64
    };
    let r = resolution;
    let mut out = Vec::with_capacity(r * r * r);
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                out.push([coord(0, i), coord(1, j), coord(2, k)]);
            }
        }
    }
    out
}

/// Samples a field on a `resolution³` grid spanning every world box.
pub fn export_grid<F>(mut model_sdf: F, body: &BodyState, resolution: usize) -> Result<Grid>
where
    F: FnMut(&[Vec3]) -> Result<Vec<f64>>,
{
    check_resolution(resolution)?;
    let (lo, hi) = body.world_bounds();
    let min = lo.map(|v| v as f32);
    let max = hi.map(|v| v as f32);
    let values = model_sdf(&grid_points(min, max, resolution))?
        .into_iter()
        .map(|v| v as f32)
        .collect();
    Ok(Grid {
        resolution,
        min,
        max,
        values,
    })
}

pub fn encode_grid(grid: &Grid) -> Result<Vec<u8>> {
    check_resolution(grid.resolution)?;
    if grid.values.len() != grid.resolution.pow(3) {
        return Err(invalid("grid value count does not match resolution"));
    }
    let mut out = Vec::with_capacity(GRID_HEADER_BYTES + 4 * grid.values.len());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.resolution as u32).to_le_bytes());
    for v in grid.min.iter().chain(&grid.max).chain(&grid.values) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    let fmt = |m: &str| Error::Format(m.to_string());
    if bytes.len() < GRID_HEADER_BYTES || &bytes[..4] != GRID_MAGIC {
        return Err(fmt("not a grid file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    if u32_at(4) != GRID_VERSION {
        return Err(fmt("unsupported grid version"));
    }
    let resolution = u32_at(8) as usize;
    check_resolution(resolution).map_err(|e| fmt(&e.to_string()))?;
    let n = resolution.pow(3);
    if bytes.len() != GRID_HEADER_BYTES + 4 * n {
        return Err(fmt("grid file size does not match its resolution"));
    }
    let min = std::array::from_fn(|i| f32_at(12 + 4 * i));
    let max = std::array::from_fn(|i| f32_at(24 + 4 * i));
    let values = (0..n).map(|i| f32_at(GRID_HEADER_BYTES + 4 * i)).collect();
    Ok(Grid {
        resolution,
        min,
        max,
        values,
    })
}

pub fn write_grid(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    std::fs::write(path, encode_grid(grid)?)?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid> {
    decode_grid(&std::fs::read(path)?)
}
