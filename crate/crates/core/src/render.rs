//! CPU splatting renderer with an analytic backward pass.
//!
//! Primitives are projected with the pinhole (EWA) Jacobian, depth sorted
//! once per image, and alpha-composited front to back per pixel. The
//! backward pass walks the same per-pixel contribution lists in reverse.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scene::{
    covariance_of, normalize_quat, param, Camera, Gaussian3D, GaussianModel, ParamVec, PARAMS_PER_GAUSSIAN,
};

pub const NEAR_PLANE: f64 = 0.01;
/// Screen-space dilation added to the projected covariance diagonal.
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d` as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    /// Color clamped to the unit cube.
    pub color: [f64; 3],
    pub alpha: f64,
    pub source_index: usize,
}

/// Project one primitive. Returns `None` when the primitive is behind the
/// near plane or its 3-sigma footprint misses the image.
pub fn project(g: &Gaussian3D, cam: &Camera) -> Option<Splat2D> {
    project_indexed(g, 0, cam)
}

fn project_indexed(g: &Gaussian3D, source_index: usize, cam: &Camera) -> Option<Splat2D> {
    let pc = cam.to_camera_frame(&g.position);
    if pc.z <= NEAR_PLANE {
        return None;
    }
    let t = projection_jacobian(cam, &pc) * cam.rotation;
    let cov2d = t * covariance_of(g) * t.transpose() + Matrix2::identity() * LOW_PASS;
    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mean2d = Vector2::new(cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy);
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = 3.0 * lambda_max.sqrt();
    if mean2d.x + radius < 0.0
        || mean2d.x - radius > cam.width as f64
        || mean2d.y + radius < 0.0
        || mean2d.y - radius > cam.height as f64
    {
        return None;
    }
    Some(Splat2D {
        mean2d,
        cov2d,
        conic: [c / det, -b / det, a / det],
        depth: pc.z,
        color: g.color.map(|v| v.clamp(0.0, 1.0)).into(),
        alpha: g.opacity(),
        source_index,
    })
}

fn projection_jacobian(cam: &Camera, pc: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * pc.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * pc.y * iz2,
    )
}

/// Depth-sorted splats and, for every pixel, the contributing splats in
/// front-to-back order (CSR layout).
#[derive(Clone, Debug)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub splats: Vec<Splat2D>,
    offsets: Vec<u32>,
    /// `(sorted splat index, clamped effective alpha)`.
    entries: Vec<(u32, f64)>,
}

impl Raster {
    pub fn build(model: &GaussianModel, cam: &Camera) -> Self {
        let mut splats: Vec<Splat2D> = model
            .gaussians
            .iter()
            .enumerate()
            .filter_map(|(i, g)| project_indexed(g, i, cam))
            .collect();
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));

        let (w, h) = (cam.width, cam.height);
        let mut hits: Vec<(u32, u32, f64)> = Vec::new();
        for (si, s) in splats.iter().enumerate() {
            if s.alpha * 255.0 < 1.0 {
                continue;
            }
            // Ellipse dᵀ Σ⁻¹ d <= q bounds x by sqrt(q Σxx), y by sqrt(q Σyy).
            let q_max = 2.0 * (255.0 * s.alpha).ln();
            let ext_x = (q_max * s.cov2d[(0, 0)]).sqrt() + 1.0;
            let ext_y = (q_max * s.cov2d[(1, 1)]).sqrt() + 1.0;
            let x0 = ((s.mean2d.x - ext_x - 0.5).floor().max(0.0)) as usize;
            let y0 = ((s.mean2d.y - ext_y - 0.5).floor().max(0.0)) as usize;
            let x1 = ((s.mean2d.x + ext_x - 0.5).ceil().min(w as f64 - 1.0)).max(-1.0);
            let y1 = ((s.mean2d.y + ext_y - 0.5).ceil().min(h as f64 - 1.0)).max(-1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            let (x1, y1) = (x1 as usize, y1 as usize);
            // Below this exponent the alpha cannot reach the cutoff; the
            // margin leaves boundary cases to the exact test.
            let min_power = -(255.0 * s.alpha).ln() - 1e-9;
            let [ca, cb, cc] = s.conic;
            for y in y0..=y1 {
                let dy = y as f64 + 0.5 - s.mean2d.y;
                for x in x0..=x1 {
                    let dx = x as f64 + 0.5 - s.mean2d.x;
                    let power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy;
                    if power < min_power {
                        continue;
                    }
                    let a = (s.alpha * power.exp()).min(ALPHA_MAX);
                    if a >= ALPHA_MIN {
                        hits.push(((y * w + x) as u32, si as u32, a));
                    }
                }
            }
        }

        // Stable counting sort by pixel keeps each list in depth order.
        let mut offsets = vec![0u32; w * h + 1];
        for &(p, _, _) in &hits {
            offsets[p as usize + 1] += 1;
        }
        for i in 0..w * h {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut entries = vec![(0u32, 0.0f64); hits.len()];
        for &(p, si, a) in &hits {
            let slot = &mut cursor[p as usize];
            entries[*slot as usize] = (si, a);
            *slot += 1;
        }
        Self {
            width: w,
            height: h,
            splats,
            offsets,
            entries,
        }
    }

    #[inline]
    fn pixel_entries(&self, pixel: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[pixel] as usize..self.offsets[pixel + 1] as usize]
    }

    pub fn num_contributions(&self) -> usize {
        self.entries.len()
    }

    /// Which primitives reach which pixels, in what order, and whether
    /// their alpha is clamped. The rendered image is a smooth function of
    /// the parameters wherever this pattern is locally constant.
    pub fn pattern(&self) -> RasterPattern {
        RasterPattern {
            offsets: self.offsets.clone(),
            entries: self
                .entries
                .iter()
                .map(|&(si, a)| (self.splats[si as usize].source_index as u32, a >= ALPHA_MAX))
                .collect(),
        }
    }

    pub fn composite(&self, background: [f64; 3]) -> ImageBuffer {
        let mut img = ImageBuffer::new(self.width, self.height);
        for (pixel, out) in img.pixels.chunks_exact_mut(3).enumerate() {
            let mut acc = [0.0; 3];
            let mut trans = 1.0;
            for &(si, a) in self.pixel_entries(pixel) {
                let c = &self.splats[si as usize].color;
                let w = a * trans;
                for k in 0..3 {
                    acc[k] += c[k] * w;
                }
                trans *= 1.0 - a;
            }
            for k in 0..3 {
                out[k] = (acc[k] + background[k] * trans).clamp(0.0, 1.0);
            }
        }
        img
    }

    /// Backpropagate `dl_dimage` through compositing and projection.
    pub fn backward(
        &self,
        model: &GaussianModel,
        cam: &Camera,
        background: [f64; 3],
        dl_dimage: &ImageBuffer,
    ) -> Result<RenderGradients> {
        if dl_dimage.dims() != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                got: dl_dimage.dims(),
            });
        }
        let n = self.splats.len();
        let mut d_mean = vec![[0.0f64; 2]; n];
        let mut d_conic = vec![[0.0f64; 3]; n];
        let mut d_opacity = vec![0.0f64; n];
        let mut d_color = vec![[0.0f64; 3]; n];
        let mut touched = vec![false; n];

        let mut trans_before: Vec<f64> = Vec::new();
        for pixel in 0..self.width * self.height {
            let list = self.pixel_entries(pixel);
            if list.is_empty() {
                continue;
            }
            let gpix = &dl_dimage.pixels[pixel * 3..pixel * 3 + 3];
            trans_before.clear();
            let mut trans = 1.0;
            for &(si, a) in list {
                touched[si as usize] = true;
                trans_before.push(trans);
                trans *= 1.0 - a;
            }
            if gpix.iter().all(|&g| g == 0.0) {
                continue;
            }
            let px = (pixel % self.width) as f64 + 0.5;
            let py = (pixel / self.width) as f64 + 0.5;
            // Contribution of everything behind the current entry.
            let mut behind = trans * (background[0] * gpix[0] + background[1] * gpix[1] + background[2] * gpix[2]);
            for (&(si, a), &t) in list.iter().zip(&trans_before).rev() {
                let si = si as usize;
                let s = &self.splats[si];
                let cg = s.color[0] * gpix[0] + s.color[1] * gpix[1] + s.color[2] * gpix[2];
                let w = a * t;
                for k in 0..3 {
                    d_color[si][k] += w * gpix[k];
                }
                let dl_da = t * cg - behind / (1.0 - a);
                behind += cg * w;
                if a >= ALPHA_MAX {
                    // Clamped: locally constant in every upstream parameter.
                    continue;
                }
                // Unclamped, so a = alpha * falloff exactly up to rounding.
                let (dx, dy) = (px - s.mean2d.x, py - s.mean2d.y);
                d_opacity[si] += dl_da * (a / s.alpha);
                let dl_dpower = dl_da * a;
                let [ca, cb, cc] = s.conic;
                d_mean[si][0] += dl_dpower * (ca * dx + cb * dy);
                d_mean[si][1] += dl_dpower * (cb * dx + cc * dy);
                d_conic[si][0] += dl_dpower * (-0.5 * dx * dx);
                d_conic[si][1] += dl_dpower * (-dx * dy);
                d_conic[si][2] += dl_dpower * (-0.5 * dy * dy);
            }
        }

        let mut out = RenderGradients::zeros(model.len());
        for (si, s) in self.splats.iter().enumerate() {
            if !touched[si] {
                continue;
            }
            let gi = s.source_index;
            out.visible[gi] = true;
            out.screen_grad_norm[gi] = Vector2::new(d_mean[si][0], d_mean[si][1]).norm();
            out.grads[gi] = chain_to_params(
                &model.gaussians[gi],
                cam,
                d_mean[si],
                d_conic[si],
                d_opacity[si],
                d_color[si],
            );
        }
        Ok(out)
    }
}

/// Chain screen-space gradients back to the primitive's parameters.
fn chain_to_params(
    g: &Gaussian3D,
    cam: &Camera,
    d_mean: [f64; 2],
    d_conic: [f64; 3],
    d_opacity: f64,
    d_color: [f64; 3],
) -> ParamVec {
    let mut grad = [0.0; PARAMS_PER_GAUSSIAN];
    let w = &cam.rotation;
    let pc = cam.to_camera_frame(&g.position);
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;

    let jac = projection_jacobian(cam, &pc);
    let t = jac * w;
    let cov3 = covariance_of(g);
    let cov2 = t * cov3 * t.transpose() + Matrix2::identity() * LOW_PASS;
    let conic = cov2.try_inverse().expect("projected covariance is SPD");

    // Symmetric-matrix gradients are carried in full-matrix form.
    let g_conic = Matrix2::new(d_conic[0], 0.5 * d_conic[1], 0.5 * d_conic[1], d_conic[2]);
    let g_cov2 = -(conic * g_conic * conic);
    let g_t = 2.0 * g_cov2 * t * cov3;
    let g_cov3 = t.transpose() * g_cov2 * t;
    let g_jac = g_t * w.transpose();

    let mut d_pc = Vector3::new(
        d_mean[0] * fx * iz,
        d_mean[1] * fy * iz,
        -d_mean[0] * fx * x * iz2 - d_mean[1] * fy * y * iz2,
    );
    d_pc.x += g_jac[(0, 2)] * (-fx * iz2);
    d_pc.y += g_jac[(1, 2)] * (-fy * iz2);
    d_pc.z += g_jac[(0, 0)] * (-fx * iz2)
        + g_jac[(0, 2)] * (2.0 * fx * x * iz3)
        + g_jac[(1, 1)] * (-fy * iz2)
        + g_jac[(1, 2)] * (2.0 * fy * y * iz3);
    let d_pos = w.transpose() * d_pc;
    grad[param::POSITION..param::POSITION + 3].copy_from_slice(d_pos.as_slice());

    let scale = g.scale();
    let qn = normalize_quat(g.rotation);
    let r = crate::scene::quat_to_matrix(qn);
    let m = r * Matrix3::from_diagonal(&scale);
    let g_m = 2.0 * g_cov3 * m;
    for k in 0..3 {
        let dl_ds: f64 = (0..3).map(|i| r[(i, k)] * g_m[(i, k)]).sum();
        grad[param::LOG_SCALE + k] = dl_ds * scale[k];
    }
    let mut g_r = g_m;
    for j in 0..3 {
        for i in 0..3 {
            g_r[(i, j)] *= scale[j];
        }
    }
    let d_qn = quat_matrix_grad(qn, &g_r);
    let norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let proj: f64 = (0..4).map(|i| qn[i] * d_qn[i]).sum();
    for i in 0..4 {
        grad[param::ROTATION + i] = (d_qn[i] - qn[i] * proj) / norm;
    }

    let o = g.opacity();
    grad[param::OPACITY] = d_opacity * o * (1.0 - o);
    for k in 0..3 {
        let c = g.color[k];
        if (0.0..=1.0).contains(&c) {
            grad[param::COLOR + k] = d_color[k];
        }
    }
    grad
}

/// `dL/dq` for `R(q)` given `dL/dR`, with `q = [w, x, y, z]` unit.
fn quat_matrix_grad(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let dot = |m: [[f64; 3]; 3]| -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += m[i][j] * g[(i, j)];
            }
        }
        s
    };
    let dw = [
        [0.0, -2.0 * z, 2.0 * y],
        [2.0 * z, 0.0, -2.0 * x],
        [-2.0 * y, 2.0 * x, 0.0],
    ];
    let dx = [
        [0.0, 2.0 * y, 2.0 * z],
        [2.0 * y, -4.0 * x, -2.0 * w],
        [2.0 * z, 2.0 * w, -4.0 * x],
    ];
    let dy = [
        [-4.0 * y, 2.0 * x, 2.0 * w],
        [2.0 * x, 0.0, 2.0 * z],
        [-2.0 * w, 2.0 * z, -4.0 * y],
    ];
    let dz = [
        [-4.0 * z, -2.0 * w, 2.0 * x],
        [2.0 * w, -4.0 * z, 2.0 * y],
        [2.0 * x, 2.0 * y, 0.0],
    ];
    [dot(dw), dot(dx), dot(dy), dot(dz)]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterPattern {
    offsets: Vec<u32>,
    entries: Vec<(u32, bool)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    /// Per-primitive gradient in the flat parameter layout.
    pub grads: Vec<ParamVec>,
    /// `‖∂L/∂mean2d‖₂` in pixel units.
    pub screen_grad_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            grads: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            screen_grad_norm: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub fn render(model: &GaussianModel, cam: &Camera, background: [f64; 3]) -> ImageBuffer {
    Raster::build(model, cam).composite(background)
}

pub fn render_backward(
    model: &GaussianModel,
    cam: &Camera,
    background: [f64; 3],
    dl_dimage: &ImageBuffer,
) -> Result<RenderGradients> {
    if dl_dimage.dims() != (cam.width, cam.height) {
        return Err(Error::DimensionMismatch {
            expected: (cam.width, cam.height),
            got: dl_dimage.dims(),
        });
    }
    Raster::build(model, cam).backward(model, cam, background, dl_dimage)
}

#[cfg(test)]
mod tests {
    use nalgebra::Matrix3;

    use super::*;
    use crate::scene::logit;

    fn axis_camera(size: usize, f: f64) -> Camera {
        Camera::new(
            f,
            f,
            size as f64 / 2.0,
            size as f64 / 2.0,
            size,
            size,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    fn model(gs: Vec<Gaussian3D>) -> GaussianModel {
        GaussianModel::with_gaussians(gs, 0.1)
    }

    #[test]
    fn on_axis_projection() {
        let cam = axis_camera(64, 100.0);
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.01, 0.5, Vector3::repeat(1.0));
        let s = project(&g, &cam).unwrap();
        assert_eq!(s.mean2d, Vector2::new(32.0, 32.0));
        assert_eq!(s.depth, 2.0);

        let mut behind = g;
        behind.position.z = -1.0;
        assert!(project(&behind, &cam).is_none());
    }

    #[test]
    fn isotropic_cov2d_on_axis() {
        let cam = axis_camera(64, 100.0);
        let sigma = 0.05;
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 2.0), sigma, 0.5, Vector3::repeat(1.0));
        let s = project(&g, &cam).unwrap();
        let expected = (100.0 * sigma / 2.0f64).powi(2) + LOW_PASS;
        assert!((s.cov2d[(0, 0)] - expected).abs() < 1e-12);
        assert!((s.cov2d[(1, 1)] - expected).abs() < 1e-12);
        assert!(s.cov2d[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn offscreen_is_culled() {
        let cam = axis_camera(32, 50.0);
        let g = Gaussian3D::isotropic(Vector3::new(10.0, 0.0, 2.0), 0.01, 0.5, Vector3::repeat(1.0));
        assert!(project(&g, &cam).is_none());
    }

    #[test]
    fn empty_model_renders_background() {
        let cam = axis_camera(8, 10.0);
        let img = render(&model(vec![]), &cam, [0.0; 3]);
        assert!(img.pixels.iter().all(|&v| v == 0.0));
        let img = render(&model(vec![]), &cam, [0.2, 0.4, 0.6]);
        assert_eq!(img.pixel(3, 5), [0.2, 0.4, 0.6]);
    }

    #[test]
    fn single_half_alpha_splat() {
        // A tiny splat centered on a pixel center: falloff is exactly 1 there.
        let cam = Camera::new(10.0, 10.0, 4.5, 4.5, 9, 9, Matrix3::identity(), Vector3::zeros()).unwrap();
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 1.0), 1e-4, 0.5, Vector3::repeat(1.0));
        let img = render(&model(vec![g]), &cam, [0.0; 3]);
        let p = img.pixel(4, 4);
        for v in p {
            assert!((v - 0.5).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn opaque_front_splat_hides_back() {
        let cam = Camera::new(10.0, 10.0, 4.5, 4.5, 9, 9, Matrix3::identity(), Vector3::zeros()).unwrap();
        let mut red = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 1.0), 1e-4, 0.5, Vector3::new(1.0, 0.0, 0.0));
        red.opacity_logit = logit(0.9999);
        let mut green = red;
        green.position.z = 2.0;
        green.color = Vector3::new(0.0, 1.0, 0.0);
        // Order in the model must not matter.
        let img = render(&model(vec![green, red]), &cam, [0.0; 3]);
        let p = img.pixel(4, 4);
        // Front alpha clamps to 0.999; green sees 0.001 transmittance.
        assert!((p[0] - ALPHA_MAX).abs() < 1e-12);
        assert!((p[1] - (1.0 - ALPHA_MAX) * ALPHA_MAX).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn zero_opacity_gives_exact_background() {
        let cam = axis_camera(16, 20.0);
        let mut gs = Vec::new();
        for i in 0..5 {
            let mut g = Gaussian3D::isotropic(Vector3::new(0.1 * i as f64, 0.0, 2.0), 0.2, 0.5, Vector3::repeat(0.7));
            g.opacity_logit = f64::NEG_INFINITY;
            gs.push(g);
        }
        let img = render(&model(gs), &cam, [0.25, 0.5, 0.75]);
        assert_eq!(img, ImageBuffer::filled(16, 16, [0.25, 0.5, 0.75]));
    }

    #[test]
    fn equal_depth_ties_break_by_index() {
        let cam = Camera::new(10.0, 10.0, 4.5, 4.5, 9, 9, Matrix3::identity(), Vector3::zeros()).unwrap();
        let mut a = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 1.0), 1e-4, 0.5, Vector3::new(1.0, 0.0, 0.0));
        a.opacity_logit = logit(0.8);
        let mut b = a;
        b.color = Vector3::new(0.0, 0.0, 1.0);
        let img = render(&model(vec![a, b]), &cam, [0.0; 3]);
        let p = img.pixel(4, 4);
        assert!((p[0] - 0.8).abs() < 1e-12);
        assert!((p[2] - 0.2 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn backward_zero_upstream_and_culled() {
        let cam = axis_camera(16, 20.0);
        let visible = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.2, 0.5, Vector3::repeat(0.7));
        let culled = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, -2.0), 0.2, 0.5, Vector3::repeat(0.7));
        let m = model(vec![visible, culled]);
        let grads = render_backward(&m, &cam, [0.0; 3], &ImageBuffer::new(16, 16)).unwrap();
        assert_eq!(grads.visible, vec![true, false]);
        assert!(grads.grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));

        let up = ImageBuffer::filled(16, 16, [1.0, -0.5, 0.25]);
        let grads = render_backward(&m, &cam, [0.1; 3], &up).unwrap();
        assert!(grads.grads[0].iter().any(|&v| v != 0.0));
        assert!(grads.grads[1].iter().all(|&v| v == 0.0));
        assert_eq!(grads.screen_grad_norm[1], 0.0);
    }

    #[test]
    fn backward_rejects_wrong_dims() {
        let cam = axis_camera(16, 20.0);
        let m = model(vec![]);
        assert!(matches!(
            render_backward(&m, &cam, [0.0; 3], &ImageBuffer::new(15, 16)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn color_gradient_matches_difference() {
        // Pixel value is linear in color, so the difference is exact.
        let cam = axis_camera(16, 20.0);
        let g = Gaussian3D::isotropic(Vector3::new(0.05, -0.03, 2.0), 0.15, 0.6, Vector3::new(0.3, 0.5, 0.7));
        let m = model(vec![g]);
        let up = ImageBuffer::filled(16, 16, [1.0, 0.0, 0.0]);
        let grads = render_backward(&m, &cam, [0.0; 3], &up).unwrap();
        let sum = |m: &GaussianModel| render(m, &cam, [0.0; 3]).pixels.iter().step_by(3).sum::<f64>();
        let mut m2 = m.clone();
        m2.gaussians[0].color.x += 0.1;
        let fd = (sum(&m2) - sum(&m)) / 0.1;
        assert!((fd - grads.grads[0][param::COLOR]).abs() < 1e-9);
    }
}
