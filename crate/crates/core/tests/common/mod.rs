//! Shared oracles for the integration and acceptance suites.
#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xvgs_core::image::ImageBuffer;
use xvgs_core::render::{render, render_backward, Raster};
use xvgs_core::scene::{Camera, Gaussian3D, GaussianModel, ParamVec, Split, View, ViewGroup, PARAMS_PER_GAUSSIAN};

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
pub const FD_ABS_FLOOR: f64 = 1e-6;

pub struct GradScene {
    pub model: GaussianModel,
    pub camera: Camera,
    pub background: [f64; 3],
    /// Upstream gradient; the scalar under test is `sum(upstream * image)`.
    pub upstream: ImageBuffer,
}

/// Random scene of up to ten primitives in front of a 16x16 camera with a
/// random rigid pose.
pub fn random_grad_scene(seed: u64) -> GradScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 16;
    let f = rng.gen_range(12.0..22.0);

    // Random pose: rotate a canonical frame, place the camera so that the
    // scene origin is in front of it.
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let rot: Matrix3<f64> = *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix();
    let camera = Camera::new(
        f,
        f * rng.gen_range(0.9..1.1),
        8.0 + rng.gen_range(-1.0..1.0),
        8.0 + rng.gen_range(-1.0..1.0),
        size,
        size,
        rot,
        Vector3::new(0.0, 0.0, 2.5),
    )
    .unwrap();

    let n = rng.gen_range(1..=10);
    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        // Sample in camera frame, map to world.
        let z = rng.gen_range(1.5..3.5);
        let half = 0.45 * z * 8.0 / f;
        let pc = Vector3::new(rng.gen_range(-half..half), rng.gen_range(-half..half), z);
        let position = rot.transpose() * (pc - camera.translation);
        let qn = rng.gen_range(0.5..1.5);
        let q: Vector3<f64> = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let w: f64 = rng.gen_range(-1.0..1.0);
        let norm = (w * w + q.norm_squared()).sqrt();
        gaussians.push(Gaussian3D {
            position,
            log_scale: Vector3::new(
                rng.gen_range(-3.0..-1.0),
                rng.gen_range(-3.0..-1.0),
                rng.gen_range(-3.0..-1.0),
            ),
            rotation: [w / norm * qn, q.x / norm * qn, q.y / norm * qn, q.z / norm * qn],
            opacity_logit: rng.gen_range(-2.0..2.5),
            color: Vector3::new(
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
            ),
        });
    }
    let background = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let upstream = ImageBuffer::from_pixels(
        size,
        size,
        (0..size * size * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    GradScene {
        model: GaussianModel::with_gaussians(gaussians, 0.1),
        camera,
        background,
        upstream,
    }
}

fn objective(scene: &GradScene, model: &GaussianModel) -> f64 {
    let img = render(model, &scene.camera, scene.background);
    img.pixels.iter().zip(&scene.upstream.pixels).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: usize,
    /// Parameters where `h` had to shrink to stay on one smooth piece.
    pub shrunk: usize,
    /// Parameters sitting on a branch boundary even at the smallest step.
    pub at_kink: usize,
}

impl FdStats {
    pub fn merge(&mut self, o: FdStats) {
        self.checked += o.checked;
        self.max_rel_err = self.max_rel_err.max(o.max_rel_err);
        self.failures += o.failures;
        self.shrunk += o.shrunk;
        self.at_kink += o.at_kink;
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= FD_ABS_FLOOR {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Central differences on every parameter of every primitive.
///
/// The rendered image is piecewise smooth: the 1/255 alpha cutoff, the
/// alpha clamp, culling and depth order are discrete decisions. A
/// difference that straddles a decision change is not a derivative, so
/// the step shrinks by 10x (down to 1e-7) until the contribution pattern
/// at `θ ± h` matches the one at `θ`.
pub fn fd_check(scene: &GradScene) -> FdStats {
    let analytic = render_backward(&scene.model, &scene.camera, scene.background, &scene.upstream).unwrap();
    let base_pattern = Raster::build(&scene.model, &scene.camera).pattern();
    let mut stats = FdStats::default();
    for gi in 0..scene.model.len() {
        let p0: ParamVec = scene.model.gaussians[gi].params();
        for k in 0..PARAMS_PER_GAUSSIAN {
            let eval = |delta: f64| {
                let mut m = scene.model.clone();
                let mut p = p0;
                p[k] += delta;
                m.gaussians[gi] = Gaussian3D::from_params(&p);
                let pattern = Raster::build(&m, &scene.camera).pattern();
                (objective(scene, &m), pattern == base_pattern)
            };
            let mut h = FD_STEP;
            let mut numeric = None;
            while h >= 1e-7 {
                let (fp, okp) = eval(h);
                let (fm, okm) = eval(-h);
                if okp && okm {
                    numeric = Some((fp - fm) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            let Some(numeric) = numeric else {
                stats.at_kink += 1;
                continue;
            };
            if h < FD_STEP {
                stats.shrunk += 1;
            }
            let e = rel_err(analytic.grads[gi][k], numeric);
            stats.checked += 1;
            stats.max_rel_err = stats.max_rel_err.max(e);
            if e >= FD_REL_TOL {
                stats.failures += 1;
                eprintln!(
                    "gradient mismatch: gaussian {gi} param {k}: analytic {} numeric {} (h={h:e})",
                    analytic.grads[gi][k], numeric
                );
            }
        }
    }
    stats
}

/// `n` small random primitives in `[-1, 1]^3`, quantized to f32.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, voxel_size: f64) -> GaussianModel {
    let gaussians = (0..n)
        .map(|_| {
            let mut g = Gaussian3D::isotropic(
                Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
                rng.gen_range(0.02..0.1),
                rng.gen_range(0.1..0.9),
                Vector3::from_fn(|_, _| rng.gen_range(0.0..1.0)),
            );
            g.quantize_f32();
            g
        })
        .collect();
    GaussianModel::with_gaussians(gaussians, voxel_size)
}

/// `count` views on a horizontal ring of `radius` around the origin,
/// rendered from `teacher` and quantized to 8 bits.
pub fn ring_group(teacher: &GaussianModel, group_id: u32, count: usize, size: usize, radius: f64) -> ViewGroup {
    let views = (0..count)
        .map(|i| {
            let a = i as f64 / count as f64 * std::f64::consts::TAU;
            let eye = Vector3::new(radius * a.cos(), radius * a.sin(), 0.8);
            let camera = Camera::look_at(eye, Vector3::zeros(), Vector3::z(), 1.0, size, size).unwrap();
            View {
                id: i,
                image: render(teacher, &camera, [0.0; 3]).quantized(),
                camera,
                split: Split::for_index(i),
            }
        })
        .collect();
    ViewGroup { group_id, views }
}
