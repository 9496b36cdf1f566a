//! Binary body files (`AVSB`): externally supplied part transforms, boxes,
//! canonical part clouds and optional ground-truth distance samples.
//!
//! Layout, little-endian:
//! ```text
//! "AVSB" | u32 version=1 | u32 K | u32 points_per_part
//! K × ( 12×f64 transform, row-major 3×4 | 6×f32 box min,max | P×3×f32 points )
//! [ u64 count | count × 4×f32 (x, y, z, signed distance) ]
//! ```

use std::fs;
use std::path::Path;

use super::{rest_skeleton, BodyState, PartBox, RigidTransform, Vec3, DEFAULT_PADDING, NUM_PARTS};
use crate::error::{Error, Result};

pub const BODY_MAGIC: &[u8; 4] = b"AVSB";
pub const BODY_VERSION: u32 = 1;
const RIGIDITY_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtSample {
    pub point: [f32; 3],
    pub sdf: f32,
}

#[derive(Clone, Debug)]
pub struct ExternalBody {
    pub body: BodyState,
    /// Canonical-frame surface points per part.
    pub clouds: Vec<Vec<[f32; 3]>>,
    pub gt: Option<Vec<GtSample>>,
}

impl ExternalBody {
    pub fn clouds_f64(&self) -> Vec<Vec<Vec3>> {
        self.clouds
            .iter()
            .map(|c| {
                c.iter()
                    .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
                    .collect()
            })
            .collect()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated body file: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_external_body(bytes: &[u8]) -> Result<ExternalBody> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != BODY_MAGIC {
        return Err(Error::Format("bad magic, expected AVSB".into()));
    }
    let version = r.u32()?;
    if version != BODY_VERSION {
        return Err(Error::Format(format!(
            "unsupported body file version {version}"
        )));
    }
    let k = r.u32()? as usize;
    let per_part = r.u32()? as usize;
    if k == 0 {
        return Err(Error::Format("body file declares zero parts".into()));
    }
    let part_bytes = 12 * 8 + 6 * 4 + per_part * 12;
    if bytes.len() < 16 + k * part_bytes {
        return Err(Error::Format(format!(
            "dimension mismatch: header declares {k} parts × {per_part} points but file has {} bytes",
            bytes.len()
        )));
    }
    let mut transforms = Vec::with_capacity(k);
    let mut boxes = Vec::with_capacity(k);
    let mut clouds = Vec::with_capacity(k);
    for part in 0..k {
        let mut m = [0.0; 12];
        for v in m.iter_mut() {
            *v = r.f64()?;
        }
        let g = RigidTransform::from_3x4(&m);
        let resid = g.rigidity_residual();
        if resid.is_nan() || resid > RIGIDITY_TOLERANCE {
            return Err(Error::Format(format!(
                "part {part}: transform is not rigid (residual {resid:.3e})"
            )));
        }
        let mut b = [0.0f64; 6];
        for v in b.iter_mut() {
            *v = r.f32()? as f64;
        }
        let bx = PartBox {
            min: [b[0], b[1], b[2]],
            max: [b[3], b[4], b[5]],
        };
        if !bx.is_valid() {
            return Err(Error::Format(format!(
                "part {part}: box min must be below max"
            )));
        }
        let mut cloud = Vec::with_capacity(per_part);
        for _ in 0..per_part {
            cloud.push([r.f32()?, r.f32()?, r.f32()?]);
        }
        transforms.push(g);
        boxes.push(bx);
        clouds.push(cloud);
    }
    let gt = if r.pos == bytes.len() {
        None
    } else {
        let count = r.u64()? as usize;
        let expected = r.pos + count * 16;
        if expected != bytes.len() {
            return Err(Error::Format(format!(
                "dimension mismatch: ground-truth block declares {count} samples, file length disagrees"
            )));
        }
        let mut gt = Vec::with_capacity(count);
        for _ in 0..count {
            gt.push(GtSample {
                point: [r.f32()?, r.f32()?, r.f32()?],
                sdf: r.f32()?,
            });
        }
        Some(gt)
    };
    let adjacency = if k == NUM_PARTS {
        rest_skeleton().adjacency()
    } else {
        Vec::new()
    };
    let body = BodyState {
        transforms,
        capsules: None,
        boxes,
        adjacency,
        scales: None,
        padding: DEFAULT_PADDING,
        params: None,
    };
    Ok(ExternalBody { body, clouds, gt })
}

pub fn encode_external_body(ext: &ExternalBody) -> Result<Vec<u8>> {
    let k = ext.body.num_parts();
    if ext.clouds.len() != k || ext.body.boxes.len() != k {
        return Err(Error::Contract(format!(
            "body has {k} transforms, {} boxes, {} clouds",
            ext.body.boxes.len(),
            ext.clouds.len()
        )));
    }
    let per_part = ext.clouds.first().map_or(0, |c| c.len());
    if ext.clouds.iter().any(|c| c.len() != per_part) {
        return Err(Error::Contract(
            "all part clouds must have the same size".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + k * (120 + per_part * 12));
    out.extend_from_slice(BODY_MAGIC);
    out.extend_from_slice(&BODY_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(per_part as u32).to_le_bytes());
    for part in 0..k {
        for v in ext.body.transforms[part].to_3x4() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let b = &ext.body.boxes[part];
        for v in b.min.iter().chain(b.max.iter()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for p in &ext.clouds[part] {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    if let Some(gt) = &ext.gt {
        out.extend_from_slice(&(gt.len() as u64).to_le_bytes());
        for s in gt {
            for v in s.point.iter().chain(std::iter::once(&s.sdf)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn load_external_body(path: impl AsRef<Path>) -> Result<ExternalBody> {
    decode_external_body(&fs::read(path)?)
}

pub fn save_external_body(path: impl AsRef<Path>, ext: &ExternalBody) -> Result<()> {
    fs::write(path, encode_external_body(ext)?)?;
    Ok(())
}
