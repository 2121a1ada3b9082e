//! Adaptive density control with per-view-group gradient statistics.
//!
//! Screen-space gradient norms and visibility counts are accumulated
//! separately for every view group. Pooling them (`Average`) lets a group
//! that sees a primitive often and fits it well dilute a salient gradient
//! from another group; `GroupMax` thresholds the largest per-group mean
//! instead. Because a pooled mean always lies between the smallest and the
//! largest per-group mean, `GroupMax` selects a superset of `Average`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::RenderGradients;
use crate::scene::GaussianModel;
use crate::voxel::{voxel_center, voxel_grid_of, voxel_key, VoxelGrid, VoxelKey};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Pooled mean `Σ∇_g / Σc_g`.
    #[default]
    Average,
    /// Largest per-group mean `max_g ∇_g / c_g` over groups that saw the primitive.
    #[serde(rename = "groupmax")]
    GroupMax,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Average => "average",
            SelectionMode::GroupMax => "groupmax",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyPolicy {
    /// Selection threshold on the mean screen-space gradient norm, with
    /// screen positions measured in half image diagonals.
    pub threshold: f64,
    pub mode: SelectionMode,
    /// Iterations between densification passes.
    pub interval: usize,
    pub prune_opacity: f64,
    pub max_primitives: usize,
    /// Scale divisor applied to densified clones.
    pub split_factor: f64,
}

impl Default for DensifyPolicy {
    fn default() -> Self {
        Self {
            threshold: 3.5e-3,
            mode: SelectionMode::Average,
            interval: 100,
            prune_opacity: 0.005,
            max_primitives: 200_000,
            split_factor: 1.6,
        }
    }
}

impl DensifyPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::Config("densify threshold must be > 0".into()));
        }
        if self.interval == 0 {
            return Err(Error::Config("densify interval must be >= 1".into()));
        }
        if !(self.prune_opacity > 0.0 && self.prune_opacity < 1.0) {
            return Err(Error::Config("prune opacity must be in (0, 1)".into()));
        }
        if !(self.split_factor > 1.0) {
            return Err(Error::Config("split factor must be > 1".into()));
        }
        Ok(())
    }
}

/// Per-primitive, per-group gradient sums and visibility counts.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientAccumulator {
    groups: Vec<u32>,
    grad_sum: Vec<f64>,
    vis_count: Vec<u32>,
}

impl GradientAccumulator {
    pub fn new(groups: &[u32], len: usize) -> Self {
        let mut groups = groups.to_vec();
        groups.sort_unstable();
        groups.dedup();
        let n = groups.len() * len;
        Self {
            groups,
            grad_sum: vec![0.0; n],
            vis_count: vec![0; n],
        }
    }

    /// Build directly from per-primitive rows, ordered like `groups`.
    pub fn from_rows(groups: &[u32], rows: &[(Vec<f64>, Vec<u32>)]) -> Self {
        let mut acc = Self::new(groups, 0);
        assert_eq!(acc.groups.len(), groups.len(), "group ids must be distinct");
        for (sums, counts) in rows {
            assert!(sums.len() == groups.len() && counts.len() == groups.len());
            // Reorder from caller order to sorted slot order.
            for &gid in &acc.groups.clone() {
                let src = groups.iter().position(|&g| g == gid).unwrap();
                acc.grad_sum.push(sums[src]);
                acc.vis_count.push(counts[src]);
            }
        }
        acc
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        if self.groups.is_empty() {
            0
        } else {
            self.grad_sum.len() / self.groups.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slot(&self, group_id: u32) -> Result<usize> {
        self.groups
            .binary_search(&group_id)
            .map_err(|_| Error::UnknownGroup(group_id))
    }

    pub fn grad_sum(&self, index: usize, group_id: u32) -> Result<f64> {
        Ok(self.grad_sum[index * self.groups.len() + self.slot(group_id)?])
    }

    pub fn vis_count(&self, index: usize, group_id: u32) -> Result<u32> {
        Ok(self.vis_count[index * self.groups.len() + self.slot(group_id)?])
    }

    fn row(&self, index: usize) -> (&[f64], &[u32]) {
        let g = self.groups.len();
        (
            &self.grad_sum[index * g..(index + 1) * g],
            &self.vis_count[index * g..(index + 1) * g],
        )
    }

    /// Add one view's screen-space gradient norms for every visible primitive.
    pub fn accumulate(&mut self, group_id: u32, grads: &RenderGradients) -> Result<()> {
        let slot = self.slot(group_id)?;
        if grads.len() != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                got: grads.len(),
            });
        }
        let g = self.groups.len();
        for (i, (&vis, &norm)) in grads.visible.iter().zip(&grads.screen_grad_norm).enumerate() {
            if vis {
                self.grad_sum[i * g + slot] += norm;
                self.vis_count[i * g + slot] += 1;
            }
        }
        Ok(())
    }

    /// Pooled mean gradient, `None` if never seen.
    pub fn average(&self, index: usize) -> Option<f64> {
        let (sums, counts) = self.row(index);
        let c: u64 = counts.iter().map(|&c| c as u64).sum();
        (c > 0).then(|| sums.iter().sum::<f64>() / c as f64)
    }

    /// Largest per-group mean over groups with a nonzero count.
    pub fn group_max(&self, index: usize) -> Option<f64> {
        let (sums, counts) = self.row(index);
        sums.iter()
            .zip(counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .reduce(f64::max)
    }

    /// Per group, the largest mean gradient over all primitives.
    pub fn max_group_averages(&self) -> Vec<(u32, f64)> {
        let g = self.groups.len();
        self.groups
            .iter()
            .enumerate()
            .map(|(slot, &gid)| {
                let best = (0..self.len())
                    .filter(|&i| self.vis_count[i * g + slot] > 0)
                    .map(|i| self.grad_sum[i * g + slot] / self.vis_count[i * g + slot] as f64)
                    .fold(0.0, f64::max);
                (gid, best)
            })
            .collect()
    }

    pub fn reset(&mut self) {
        self.grad_sum.iter_mut().for_each(|v| *v = 0.0);
        self.vis_count.iter_mut().for_each(|v| *v = 0);
    }

    /// Append zeroed rows until the accumulator covers `len` primitives.
    pub fn extend_to(&mut self, len: usize) {
        let n = len * self.groups.len();
        self.grad_sum.resize(n, 0.0);
        self.vis_count.resize(n, 0);
    }

    /// Keep only rows whose mask entry is `true`, preserving order.
    pub fn retain(&mut self, keep: &[bool]) {
        let g = self.groups.len();
        let mut w = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                for s in 0..g {
                    self.grad_sum[w * g + s] = self.grad_sum[i * g + s];
                    self.vis_count[w * g + s] = self.vis_count[i * g + s];
                }
                w += 1;
            }
        }
        self.grad_sum.truncate(w * g);
        self.vis_count.truncate(w * g);
    }
}

/// Indices (ascending) whose mean gradient strictly exceeds the threshold.
pub fn select_densify(acc: &GradientAccumulator, policy: &DensifyPolicy) -> Vec<usize> {
    (0..acc.len())
        .filter(|&i| {
            let score = match policy.mode {
                SelectionMode::Average => acc.average(i),
                SelectionMode::GroupMax => acc.group_max(i),
            };
            score.is_some_and(|s| s > policy.threshold)
        })
        .collect()
}

/// Deploy a shrunken clone of each selected primitive at the center of its
/// voxel, unless a primitive already sits exactly on that center. At most
/// one clone per voxel per pass; the model never exceeds
/// `policy.max_primitives`.
///
/// `grid` must equal `voxel_grid_of(model)`; it is kept in sync, and the
/// accumulator gains zeroed rows for the new primitives.
pub fn densify(
    model: &mut GaussianModel,
    acc: &mut GradientAccumulator,
    selected: &[usize],
    grid: &mut VoxelGrid,
    policy: &DensifyPolicy,
) -> Result<usize> {
    if grid.voxel_size != model.voxel_size || *grid != voxel_grid_of(model) {
        return Err(Error::StaleGrid);
    }
    if acc.len() != model.len() {
        return Err(Error::SizeMismatch {
            expected: model.len(),
            got: acc.len(),
        });
    }
    let eps = model.voxel_size;
    let mut hosted: HashSet<VoxelKey> = model
        .gaussians
        .iter()
        .filter_map(|g| {
            let k = voxel_key(&g.position, eps).ok()?;
            (g.position == voxel_center(k, eps)).then_some(k)
        })
        .collect();

    let shrink = policy.split_factor.ln();
    let mut added = 0;
    let mut sorted = selected.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for i in sorted {
        if model.len() >= policy.max_primitives {
            break;
        }
        let src = model.gaussians[i];
        let key = voxel_key(&src.position, eps)?;
        if !hosted.insert(key) {
            continue;
        }
        let mut clone = src;
        clone.position = voxel_center(key, eps);
        clone.log_scale.add_scalar_mut(-shrink);
        model.gaussians.push(clone);
        grid.insert(key);
        added += 1;
    }
    acc.extend_to(model.len());
    Ok(added)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pruned {
    pub removed: usize,
    /// Survivor mask over the pre-prune indices.
    pub keep: Vec<bool>,
}

/// Remove primitives whose opacity is below `policy.prune_opacity`,
/// compacting the model and accumulator stably.
pub fn prune(model: &mut GaussianModel, acc: &mut GradientAccumulator, policy: &DensifyPolicy) -> Pruned {
    let keep: Vec<bool> = model
        .gaussians
        .iter()
        .map(|g| g.opacity() >= policy.prune_opacity)
        .collect();
    let removed = keep.iter().filter(|k| !**k).count();
    if removed > 0 {
        let mut it = keep.iter();
        model.gaussians.retain(|_| *it.next().unwrap());
        acc.retain(&keep);
    }
    Pruned { removed, keep }
}

pub fn reset(acc: &mut GradientAccumulator) {
    acc.reset();
}

/// One line of the densification diagnostics log.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyPass {
    pub iteration: usize,
    pub mode: SelectionMode,
    pub candidates: usize,
    pub added: usize,
    pub pruned: usize,
    pub max_group_average: Vec<(u32, f64)>,
}

impl fmt::Display for DensifyPass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} mode={} candidates={} added={} pruned={}",
            self.iteration, self.mode, self.candidates, self.added, self.pruned
        )?;
        for (g, v) in &self.max_group_average {
            write!(f, " maxavg[{g}]={v:.6e}")?;
        }
        Ok(())
    }
}
