//! Cross-view reconstruction stages.
//!
//! Per-group branch models are trained independently; the distant-view
//! branch is downsampled into the initial point cloud of a single
//! cross-view model, which is trained on all views with per-group density
//! control and a hinge against the branches' renderings. Branch primitives
//! in voxels the cross-view model never reached are then appended, and the
//! result is fine-tuned.
//!
//! Every stage is a pure function of its inputs and the configured seed,
//! and every returned model is rounded to `f32` so checkpoints written
//! between stages reload bit-exactly.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adc::{densify, prune, select_densify, DensifyPass, DensifyPolicy, GradientAccumulator, SelectionMode};
use crate::dataset::{Bounds, Dataset};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::losses::{objective_and_grad, psnr, ssim, volume_reg_grad, Distance, LossWeights};
use crate::optim::{Adam, LearningRates};
use crate::render::{render, Raster};
use crate::scene::{logit, param, Gaussian3D, GaussianModel, PointCloud, View, ViewGroup};
use crate::voxel::{voxel_grid_of, voxel_key, VoxelKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub branch_iters: usize,
    pub cross_iters: usize,
    pub finetune_iters: usize,
    /// Keep one of every `downsample_ratio` branch primitives as an
    /// initial point.
    pub downsample_ratio: usize,
    pub weights: LossWeights,
    /// Image distance inside the reference hinge.
    pub distance: Distance,
    pub policy: DensifyPolicy,
    /// Density control runs on passes inside `[densify_from, densify_until * iters]`.
    pub densify_from: usize,
    pub densify_until: f64,
    /// Keep densification on during fine-tuning.
    pub finetune_densify: bool,
    /// Keep opacity pruning on during fine-tuning.
    pub finetune_prune: bool,
    pub voxel_size: f64,
    pub lr: LearningRates,
    pub seed: u64,
    /// Group whose branch seeds the cross-view model.
    pub distant_group: u32,
    pub background: [f64; 3],
    /// Size of the random initial point cloud.
    pub init_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            branch_iters: 3000,
            cross_iters: 3000,
            finetune_iters: 2000,
            downsample_ratio: 10,
            weights: LossWeights::default(),
            distance: Distance::L1,
            policy: DensifyPolicy::default(),
            densify_from: 200,
            densify_until: 0.6,
            finetune_densify: false,
            finetune_prune: true,
            voxel_size: 0.1,
            lr: LearningRates::default(),
            seed: 0,
            distant_group: 0,
            background: [0.0, 0.0, 0.0],
            init_points: 300,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample_ratio == 0 {
            return Err(Error::Config("downsample_ratio must be >= 1".into()));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::Config("voxel_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.densify_until) {
            return Err(Error::Config("densify_until must be a fraction in [0, 1]".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("background must lie in [0, 1]".into()));
        }
        self.weights.validate()?;
        self.policy.validate()?;
        self.lr.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Per-iteration losses and density-control diagnostics of one stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub passes: Vec<DensifyPass>,
    pub selections: Vec<Vec<usize>>,
}

impl TrainLog {
    pub fn added(&self) -> usize {
        self.passes.iter().map(|p| p.added).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: GaussianModel,
    pub log: TrainLog,
}

/// Uniform points inside `bounds`, drawn from `seed`.
pub fn random_pointcloud(bounds: &Bounds, n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| Vector3::from_fn(|k, _| rng.gen_range(bounds.min[k]..=bounds.max[k])))
        .collect();
    PointCloud::new(points)
}

/// Deterministic keep-every-`ratio` after sorting by `(voxel key, index)`.
pub fn downsample_to_pointcloud(model: &GaussianModel, ratio: usize) -> Result<PointCloud> {
    if model.is_empty() {
        return Err(Error::Empty("model"));
    }
    if ratio == 0 {
        return Err(Error::Config("downsample ratio must be >= 1".into()));
    }
    let mut order: Vec<(VoxelKey, usize)> = model
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| Ok((voxel_key(&g.position, model.voxel_size)?, i)))
        .collect::<Result<_>>()?;
    order.sort_unstable();
    let kept: Vec<usize> = order.iter().step_by(ratio).map(|&(_, i)| i).collect();
    Ok(PointCloud {
        points: kept.iter().map(|&i| model.gaussians[i].position).collect(),
        colors: Some(kept.iter().map(|&i| model.gaussians[i].color).collect()),
    })
}

/// Mean distance from each point to its (up to) three nearest neighbors.
fn knn3_mean_distance(points: &[Vector3<f64>]) -> Vec<Option<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if d < best[2] {
                    best[2] = d;
                    best.sort_unstable_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.iter().filter(|d| d.is_finite()).map(|d| d.sqrt()).collect();
            (!found.is_empty()).then(|| found.iter().sum::<f64>() / found.len() as f64)
        })
        .collect()
}

/// One isotropic primitive per point, sized by its neighbor spacing.
pub fn init_cross(pc: &PointCloud, cfg: &PipelineConfig) -> Result<GaussianModel> {
    if pc.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    if pc.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("point cloud"));
    }
    let spacing = knn3_mean_distance(&pc.points);
    let gaussians = pc
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = spacing[i].unwrap_or(cfg.voxel_size).max(1e-7);
            let color = pc.colors.as_ref().map_or(Vector3::repeat(0.5), |c| c[i]);
            Gaussian3D {
                position: *p,
                log_scale: Vector3::repeat(d.ln()),
                rotation: [1.0, 0.0, 0.0, 0.0],
                opacity_logit: logit(0.1),
                color,
            }
        })
        .collect();
    let mut model = GaussianModel::with_gaussians(gaussians, cfg.voxel_size);
    model.quantize_f32();
    Ok(model)
}

struct Sample<'a> {
    group: u32,
    view: &'a View,
    reference: Option<ImageBuffer>,
}

struct LoopSpec {
    iters: usize,
    densify: Option<SelectionMode>,
    prune: bool,
    lambda_reg: f64,
}

fn train_loop(
    mut model: GaussianModel,
    samples: &[Sample],
    groups: &[u32],
    cfg: &PipelineConfig,
    spec: LoopSpec,
) -> Result<Trained> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training views"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.len());
    let mut acc = GradientAccumulator::new(groups, model.len());
    let weights = LossWeights {
        lambda_reg: spec.lambda_reg,
        ..cfg.weights
    };
    let policy = DensifyPolicy {
        mode: spec.densify.unwrap_or(cfg.policy.mode),
        ..cfg.policy
    };
    let densify_end = (cfg.densify_until * spec.iters as f64).floor() as usize;
    let mut log = TrainLog::default();

    for it in 0..spec.iters {
        let sample = &samples[rng.gen_range(0..samples.len())];
        let cam = &sample.view.camera;
        let raster = Raster::build(&model, cam);
        let pred = raster.composite(cfg.background);
        let (terms, dl_dimage) = objective_and_grad(
            &pred,
            &sample.view.image,
            sample.reference.as_ref(),
            &model,
            &weights,
            cfg.distance,
        )?;
        log.losses.push(terms.total(&weights));

        let mut grads = raster.backward(&model, cam, cfg.background, &dl_dimage)?;
        if weights.lambda_vol > 0.0 {
            for (g, v) in grads.grads.iter_mut().zip(volume_reg_grad(&model)) {
                for k in 0..3 {
                    g[param::LOG_SCALE + k] += weights.lambda_vol * v[k];
                }
            }
        }
        adam.step(&mut model, &grads.grads, &cfg.lr, cfg.lr.position_at(it, spec.iters))?;

        if spec.densify.is_some() {
            // Gradients in units of the half image diagonal.
            let half_diag = 0.5 * cam.diagonal();
            grads.screen_grad_norm.iter_mut().for_each(|n| *n *= half_diag);
            acc.accumulate(sample.group, &grads)?;
        } else if !spec.prune {
            continue;
        }

        let done = it + 1;
        if done % policy.interval == 0 && done >= cfg.densify_from && done <= densify_end {
            let mut selected = Vec::new();
            let mut added = 0;
            if spec.densify.is_some() {
                selected = select_densify(&acc, &policy);
                let mut grid = voxel_grid_of(&model);
                added = densify(&mut model, &mut acc, &selected, &mut grid, &policy)?;
                adam.extend_to(model.len());
            }
            let max_group_average = acc.max_group_averages();
            let pruned = prune(&mut model, &mut acc, &policy);
            adam.retain(&pruned.keep);
            log.passes.push(DensifyPass {
                iteration: done,
                mode: policy.mode,
                candidates: selected.len(),
                added,
                pruned: pruned.removed,
                max_group_average,
            });
            log.selections.push(selected);
            acc.reset();
        }
    }
    model.quantize_f32();
    Ok(Trained { model, log })
}

fn train_samples<'a>(groups: &'a [ViewGroup]) -> Vec<Sample<'a>> {
    groups
        .iter()
        .flat_map(|g| {
            g.train_views().map(move |view| Sample {
                group: g.group_id,
                view,
                reference: None,
            })
        })
        .collect()
}

/// Train a sub-model on one view group, starting from `init`.
pub fn train_branch(group: &ViewGroup, init: &PointCloud, cfg: &PipelineConfig) -> Result<Trained> {
    if group.train_views().next().is_none() {
        return Err(Error::Empty("view group"));
    }
    let model = init_cross(init, cfg)?;
    let groups = std::slice::from_ref(group);
    train_loop(
        model,
        &train_samples(groups),
        &[group.group_id],
        cfg,
        LoopSpec {
            iters: cfg.branch_iters,
            densify: Some(cfg.policy.mode),
            prune: true,
            lambda_reg: 0.0,
        },
    )
}

/// Render every training view of every group with its group's branch;
/// `branches[i]` belongs to `groups[i]`.
pub fn pseudo_labels(
    groups: &[ViewGroup],
    branches: &[GaussianModel],
    background: [f64; 3],
) -> Result<Vec<Vec<ImageBuffer>>> {
    groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let branch = branches.get(i).ok_or(Error::MissingBranch(g.group_id))?;
            Ok(g.train_views().map(|v| render(branch, &v.camera, background)).collect())
        })
        .collect()
}

/// Joint training on all groups. The hinge references come from
/// `branches[i]` for views of `groups[i]` and are required only when
/// `λ_reg > 0`; `mode` picks the densification criterion.
pub fn train_cross(
    init: &GaussianModel,
    groups: &[ViewGroup],
    branches: &[GaussianModel],
    cfg: &PipelineConfig,
    mode: SelectionMode,
) -> Result<Trained> {
    if groups.is_empty() {
        return Err(Error::Empty("view groups"));
    }
    let mut samples = train_samples(groups);
    if cfg.weights.lambda_reg > 0.0 {
        let labels = pseudo_labels(groups, branches, cfg.background)?;
        for (s, r) in samples.iter_mut().zip(labels.into_iter().flatten()) {
            s.reference = Some(r);
        }
    }
    let ids: Vec<u32> = groups.iter().map(|g| g.group_id).collect();
    train_loop(
        init.clone(),
        &samples,
        &ids,
        cfg,
        LoopSpec {
            iters: cfg.cross_iters,
            densify: Some(mode),
            prune: true,
            lambda_reg: cfg.weights.lambda_reg,
        },
    )
}

/// Reconstruction-loss-only consolidation on all groups.
pub fn finetune(model: &GaussianModel, groups: &[ViewGroup], cfg: &PipelineConfig) -> Result<Trained> {
    if model.is_empty() {
        return Err(Error::Empty("model"));
    }
    let ids: Vec<u32> = groups.iter().map(|g| g.group_id).collect();
    train_loop(
        model.clone(),
        &train_samples(groups),
        &ids,
        cfg,
        LoopSpec {
            iters: cfg.finetune_iters,
            densify: cfg.finetune_densify.then_some(cfg.policy.mode),
            prune: cfg.finetune_prune,
            lambda_reg: 0.0,
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSupplement {
    pub branch: usize,
    pub total: usize,
    /// Primitives in voxels the model did not occupy; these were appended.
    pub unique: usize,
    pub common: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplementReport {
    pub cross_before: usize,
    pub cross_after: usize,
    pub branches: Vec<BranchSupplement>,
}

fn check_voxel_size(a: &GaussianModel, b: &GaussianModel) -> Result<()> {
    if a.voxel_size != b.voxel_size {
        return Err(Error::VoxelSizeMismatch(a.voxel_size, b.voxel_size));
    }
    Ok(())
}

/// Append every branch primitive whose voxel the model does not occupy.
/// Branches are processed in order; a voxel filled by one branch counts as
/// occupied for the next.
pub fn supplement(cross: &GaussianModel, branches: &[GaussianModel]) -> Result<(GaussianModel, SupplementReport)> {
    for b in branches {
        check_voxel_size(cross, b)?;
    }
    let eps = cross.voxel_size;
    let mut grid = voxel_grid_of(cross);
    let mut out = cross.clone();
    let mut report = SupplementReport {
        cross_before: cross.len(),
        ..Default::default()
    };
    for (bi, branch) in branches.iter().enumerate() {
        let mut fresh: Vec<VoxelKey> = Vec::new();
        let mut unique = 0;
        for g in &branch.gaussians {
            let key = voxel_key(&g.position, eps)?;
            if !grid.contains(&key) {
                out.gaussians.push(*g);
                fresh.push(key);
                unique += 1;
            }
        }
        for k in fresh {
            grid.insert(k);
        }
        report.branches.push(BranchSupplement {
            branch: bi,
            total: branch.len(),
            unique,
            common: branch.len() - unique,
        });
    }
    report.cross_after = out.len();
    Ok((out, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub a: usize,
    pub b: usize,
    pub unique_primitives: usize,
    pub common_primitives: usize,
    pub unique_voxels: usize,
    pub common_voxels: usize,
}

/// For each ordered pair `(A, B)`, how many primitives (and voxels) of `A`
/// fall in voxels occupied by `B`.
pub fn overlap_report(models: &[GaussianModel]) -> Result<Vec<OverlapEntry>> {
    if let Some(first) = models.first() {
        for m in &models[1..] {
            check_voxel_size(first, m)?;
        }
    }
    let grids: Vec<_> = models.iter().map(voxel_grid_of).collect();
    let mut out = Vec::new();
    for (a, ma) in models.iter().enumerate() {
        for (b, gb) in grids.iter().enumerate() {
            if a == b {
                continue;
            }
            let common_primitives = ma
                .gaussians
                .iter()
                .filter(|g| voxel_key(&g.position, ma.voxel_size).is_ok_and(|k| gb.contains(&k)))
                .count();
            let common_voxels = grids[a].keys().iter().filter(|k| gb.contains(k)).count();
            out.push(OverlapEntry {
                a,
                b,
                unique_primitives: ma.len() - common_primitives,
                common_primitives,
                unique_voxels: grids[a].len() - common_voxels,
                common_voxels,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub view: usize,
    pub group: u32,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanMetrics {
    pub images: usize,
    /// Images with finite PSNR; only these enter `psnr`.
    pub finite: usize,
    /// Mean PSNR over finite images, `+inf` if every image is exact.
    pub psnr: f64,
    pub ssim: f64,
}

impl MeanMetrics {
    fn of(rows: &[&ImageMetrics]) -> Self {
        let finite: Vec<f64> = rows.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
        let psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        Self {
            images: rows.len(),
            finite: finite.len(),
            psnr,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub images: Vec<ImageMetrics>,
    pub groups: Vec<(u32, MeanMetrics)>,
    pub overall: MeanMetrics,
}

impl MetricsReport {
    pub fn group(&self, id: u32) -> Option<&MeanMetrics> {
        self.groups.iter().find(|(g, _)| *g == id).map(|(_, m)| m)
    }
}

/// One record per line: `image`, `group` and `overall` rows.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.images {
            writeln!(
                f,
                "image view={} group={} psnr={} ssim={}",
                r.view, r.group, r.psnr, r.ssim
            )?;
        }
        let mean = |f: &mut fmt::Formatter<'_>, m: &MeanMetrics| {
            write!(
                f,
                "images={} finite={} psnr={} ssim={}",
                m.images, m.finite, m.psnr, m.ssim
            )?;
            if m.finite < m.images {
                write!(f, " exact_excluded={}", m.images - m.finite)?;
            }
            writeln!(f)
        };
        for (g, m) in &self.groups {
            write!(f, "group id={g} ")?;
            mean(f, m)?;
        }
        write!(f, "overall ")?;
        mean(f, &self.overall)
    }
}

/// PSNR and SSIM of 8-bit renders against every test image.
pub fn evaluate(model: &GaussianModel, groups: &[ViewGroup], background: [f64; 3]) -> Result<MetricsReport> {
    let mut images = Vec::new();
    for g in groups {
        for v in g.test_views() {
            let pred = render(model, &v.camera, background).quantized();
            images.push(ImageMetrics {
                view: v.id,
                group: g.group_id,
                psnr: psnr(&pred, &v.image)?,
                ssim: ssim(&pred, &v.image)?,
            });
        }
    }
    if images.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let groups_out = groups
        .iter()
        .filter_map(|g| {
            let rows: Vec<&ImageMetrics> = images.iter().filter(|r| r.group == g.group_id).collect();
            (!rows.is_empty()).then(|| (g.group_id, MeanMetrics::of(&rows)))
        })
        .collect();
    let all: Vec<&ImageMetrics> = images.iter().collect();
    let overall = MeanMetrics::of(&all);
    Ok(MetricsReport {
        images,
        groups: groups_out,
        overall,
    })
}

/// Which method components a run enables. All off is the joint baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    /// Seed the joint model from the downsampled distant-view branch.
    pub branch_init: bool,
    /// Per-group maximum instead of pooled average for densification.
    pub group_max: bool,
    /// Hinge against branch renderings.
    pub regularize: bool,
    /// Append branch primitives from unoccupied voxels before fine-tuning.
    pub supplement: bool,
}

impl Variant {
    pub const BASELINE: Variant = Variant {
        branch_init: false,
        group_max: false,
        regularize: false,
        supplement: false,
    };
    pub const FULL: Variant = Variant {
        branch_init: true,
        group_max: true,
        regularize: true,
        supplement: true,
    };

    pub fn needs_branches(&self) -> bool {
        self.branch_init || self.regularize || self.supplement
    }

    pub fn name(&self) -> String {
        let parts: Vec<&str> = [
            (self.branch_init, "init"),
            (self.group_max, "groupmax"),
            (self.regularize, "reg"),
            (self.supplement, "supplement"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }
}

/// Branch models in dataset group order.
pub fn train_branches(data: &Dataset, cfg: &PipelineConfig) -> Result<Vec<Trained>> {
    let init = random_pointcloud(&data.bounds, cfg.init_points, cfg.seed);
    data.groups.iter().map(|g| train_branch(g, &init, cfg)).collect()
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub variant: Variant,
    pub model: GaussianModel,
    pub metrics: MetricsReport,
    pub supplement: Option<SupplementReport>,
    pub cross_log: TrainLog,
    pub finetune_log: TrainLog,
}

/// Run the joint stages of `variant`. Every variant spends the same
/// `cross_iters + finetune_iters` on the joint model; `branches` (in
/// dataset group order) are required when the variant uses them.
pub fn run_variant(
    data: &Dataset,
    branches: &[GaussianModel],
    cfg: &PipelineConfig,
    variant: Variant,
) -> Result<RunOutput> {
    let init = if variant.branch_init {
        let gi = data
            .groups
            .iter()
            .position(|g| g.group_id == cfg.distant_group)
            .ok_or(Error::MissingBranch(cfg.distant_group))?;
        let branch = branches.get(gi).ok_or(Error::MissingBranch(cfg.distant_group))?;
        init_cross(&downsample_to_pointcloud(branch, cfg.downsample_ratio)?, cfg)?
    } else {
        init_cross(&random_pointcloud(&data.bounds, cfg.init_points, cfg.seed), cfg)?
    };
    let mut cross_cfg = cfg.clone();
    if !variant.regularize {
        cross_cfg.weights.lambda_reg = 0.0;
    }
    let mode = if variant.group_max {
        SelectionMode::GroupMax
    } else {
        SelectionMode::Average
    };
    let cross = train_cross(&init, &data.groups, branches, &cross_cfg, mode)?;
    let (joined, report) = if variant.supplement {
        let (m, r) = supplement(&cross.model, branches)?;
        (m, Some(r))
    } else {
        (cross.model.clone(), None)
    };
    let tuned = finetune(&joined, &data.groups, cfg)?;
    let metrics = evaluate(&tuned.model, &data.groups, cfg.background)?;
    Ok(RunOutput {
        variant,
        model: tuned.model,
        metrics,
        supplement: report,
        cross_log: cross.log,
        finetune_log: tuned.log,
    })
}

/// Text block summarizing density-control passes, one line each.
pub fn format_passes(log: &TrainLog) -> String {
    let mut s = String::new();
    for p in &log.passes {
        let _ = writeln!(s, "{p}");
    }
    s
}

/// Voxel keys of `model` as a set, for oracle comparisons.
pub fn voxel_keys(model: &GaussianModel) -> Result<HashSet<VoxelKey>> {
    model
        .gaussians
        .iter()
        .map(|g| voxel_key(&g.position, model.voxel_size))
        .collect()
}

/// Run several variants on one dataset, training branches once if any
/// variant needs them.
pub fn run_experiment(
    data: &Dataset,
    cfg: &PipelineConfig,
    variants: &[Variant],
) -> Result<(Vec<GaussianModel>, Vec<RunOutput>)> {
    let branches: Vec<GaussianModel> = if variants.iter().any(Variant::needs_branches) {
        train_branches(data, cfg)?.into_iter().map(|t| t.model).collect()
    } else {
        Vec::new()
    };
    let runs = variants
        .iter()
        .map(|&v| run_variant(data, &branches, cfg, v))
        .collect::<Result<_>>()?;
    Ok((branches, runs))
}
