//! Integer voxel keys and occupancy grids.
//!
//! Keys use floor division, so a point on a cell boundary belongs to the
//! upper cell and the mapping is total for every finite point.

use std::collections::HashSet;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::GaussianModel;

pub type VoxelKey = [i64; 3];

pub fn voxel_key(p: &Vector3<f64>, voxel_size: f64) -> Result<VoxelKey> {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(Error::NonFinite("voxel position"));
    }
    Ok([
        (p.x / voxel_size).floor() as i64,
        (p.y / voxel_size).floor() as i64,
        (p.z / voxel_size).floor() as i64,
    ])
}

pub fn voxel_center(key: VoxelKey, voxel_size: f64) -> Vector3<f64> {
    Vector3::new(
        (key[0] as f64 + 0.5) * voxel_size,
        (key[1] as f64 + 0.5) * voxel_size,
        (key[2] as f64 + 0.5) * voxel_size,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    keys: HashSet<VoxelKey>,
}

impl VoxelGrid {
    pub fn new(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            keys: HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: &VoxelKey) -> bool {
        self.keys.contains(key)
    }

    /// Returns `true` if the key was newly inserted.
    pub fn insert(&mut self, key: VoxelKey) -> bool {
        self.keys.insert(key)
    }

    pub fn keys(&self) -> &HashSet<VoxelKey> {
        &self.keys
    }

    /// Keys in lexicographic order.
    pub fn sorted_keys(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<_> = self.keys.iter().copied().collect();
        keys.sort_unstable();
        keys
    }
}

/// Occupancy grid of the model's primitive positions at its own voxel size.
///
/// Positions are validated when primitives are created, so a non-finite
/// position here is a logic error and panics.
pub fn voxel_grid_of(model: &GaussianModel) -> VoxelGrid {
    let mut grid = VoxelGrid::new(model.voxel_size);
    for g in &model.gaussians {
        let key = voxel_key(&g.position, model.voxel_size).expect("model positions are finite");
        grid.insert(key);
    }
    grid
}
