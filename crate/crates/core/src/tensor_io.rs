//! Little-endian binary tensor files.
//!
//! Layout: magic `ECMT`, version byte `1`, rank byte, `rank` × u32 dims,
//! then `f32` payload in row-major order (last dim fastest).

use std::fs;
use std::path::Path;

use crate::correspondence::CorrespondenceField;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;

pub const MAGIC: &[u8; 4] = b"ECMT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > u8::MAX as usize {
            return malformed(format!("tensor rank must be in 1..=255, got {}", dims.len()));
        }
        let n = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d as usize));
        if n != Some(data.len()) {
            return malformed(format!("dims {dims:?} do not match {} values", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return malformed("missing ECMT magic");
        }
        if bytes[4] != VERSION {
            return malformed(format!("unsupported tensor version {}", bytes[4]));
        }
        let rank = bytes[5] as usize;
        if rank == 0 {
            return malformed("tensor rank must be >= 1");
        }
        let header = 6 + 4 * rank;
        if bytes.len() < header {
            return malformed("truncated tensor header");
        }
        let dims: Vec<u32> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let count = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d as usize));
        let expected = count.and_then(|n| n.checked_mul(4));
        if expected != Some(bytes.len() - header) {
            return malformed(format!(
                "payload of {} bytes does not match dims {dims:?}",
                bytes.len() - header
            ));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    /// `[C, H, W]` tensor of a feature map (values narrowed to `f32`).
    pub fn from_feature_map(map: &FeatureMap) -> Self {
        let (c, h, w) = map.dims();
        Self { dims: vec![c as u32, h as u32, w as u32], data: map.data().iter().map(|v| *v as f32).collect() }
    }

    pub fn to_feature_map(&self) -> Result<FeatureMap> {
        let [c, h, w] = self.dims[..] else {
            return malformed(format!("feature maps are rank 3 (C, H, W), got dims {:?}", self.dims));
        };
        if self.data.iter().any(|v| !v.is_finite()) {
            return malformed("feature tensor holds non-finite values");
        }
        FeatureMap::from_vec(c as usize, h as usize, w as usize, self.data.iter().map(|v| *v as f64).collect())
            .map_err(|e| Error::Format(e.to_string()))
    }

    /// `[H, W, D, 3]` tensor of `(u, v, valid)` per cell and anchor.
    pub fn from_field(field: &CorrespondenceField) -> Self {
        let g = field.grid();
        let dims = vec![g.height as u32, g.width as u32, field.depth_count() as u32, 3];
        let data = field
            .targets()
            .iter()
            .zip(field.valid())
            .flat_map(|(p, ok)| [p.u as f32, p.v as f32, if *ok { 1.0 } else { 0.0 }])
            .collect();
        Self { dims, data }
    }
}
