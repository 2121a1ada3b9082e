//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `XVGS`, `u32` version, `u64` primitive
//! count, `f32` voxel size, then 14 `f32` per primitive in declaration
//! order: position, log-scale, rotation (w, x, y, z), opacity logit, color.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{Gaussian3D, GaussianModel, ParamVec, PARAMS_PER_GAUSSIAN};

pub const MAGIC: [u8; 4] = *b"XVGS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;
const RECORD_LEN: usize = PARAMS_PER_GAUSSIAN * 4;

pub fn serialize_model(model: &GaussianModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + model.len() * RECORD_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.len() as u64).to_le_bytes());
    out.extend_from_slice(&(model.voxel_size as f32).to_le_bytes());
    for g in &model.gaussians {
        for v in g.params() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn deserialize_model(bytes: &[u8]) -> Result<GaussianModel> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(Error::Truncated {
                needed: n,
                available: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(4)?;
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    need(8)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    need(HEADER_LEN)?;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let voxel_size = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::Config(format!(
            "checkpoint voxel size {voxel_size} is not positive"
        )));
    }
    let total = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(RECORD_LEN))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or(Error::Truncated {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
    need(total)?;
    if bytes.len() > total {
        return Err(Error::TrailingBytes(bytes.len() - total));
    }

    let gaussians = bytes[HEADER_LEN..total]
        .chunks_exact(RECORD_LEN)
        .map(|rec| {
            let mut p: ParamVec = [0.0; PARAMS_PER_GAUSSIAN];
            for (v, b) in p.iter_mut().zip(rec.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap()) as f64;
            }
            Gaussian3D::from_params(&p)
        })
        .collect();
    Ok(GaussianModel::with_gaussians(gaussians, voxel_size))
}

pub fn save_model(model: &GaussianModel, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GaussianModel> {
    deserialize_model(&std::fs::read(path)?)
}
