//! Primitives, cameras and view groups.
//!
//! A [`Gaussian3D`] is stored in its optimization parameterization: log
//! standard deviations per axis and an (ambient, renormalized) quaternion
//! rather than a raw covariance, so every parameter vector maps to a valid
//! SPD covariance.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Number of scalar parameters per primitive.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// Offsets into the flat parameter layout (declaration order, also the
/// checkpoint record order).
pub mod param {
    pub const POSITION: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    pub const COLOR: usize = 11;
}

pub type ParamVec = [f64; PARAMS_PER_GAUSSIAN];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian3D {
    pub position: Vector3<f64>,
    /// Log of the per-axis standard deviation.
    pub log_scale: Vector3<f64>,
    /// Quaternion as `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn isotropic(position: Vector3<f64>, sigma: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            position,
            log_scale: Vector3::repeat(sigma.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let q = normalize_quat(self.rotation);
        quat_to_matrix(q)
    }

    pub fn params(&self) -> ParamVec {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(self.position.as_slice());
        p[3..6].copy_from_slice(self.log_scale.as_slice());
        p[6..10].copy_from_slice(&self.rotation);
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(self.color.as_slice());
        p
    }

    pub fn from_params(p: &ParamVec) -> Self {
        Self {
            position: Vector3::new(p[0], p[1], p[2]),
            log_scale: Vector3::new(p[3], p[4], p[5]),
            rotation: [p[6], p[7], p[8], p[9]],
            opacity_logit: p[10],
            color: Vector3::new(p[11], p[12], p[13]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    /// Round every field to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        let mut p = self.params();
        for v in &mut p {
            *v = *v as f32 as f64;
        }
        *self = Self::from_params(&p);
    }
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// World-space covariance `R diag(s)^2 R^T`.
pub fn covariance_of(g: &Gaussian3D) -> Matrix3<f64> {
    let m = g.rotation_matrix() * Matrix3::from_diagonal(&g.scale());
    let cov = m * m.transpose();
    // Symmetrize away rounding asymmetry.
    (cov + cov.transpose()) * 0.5
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    pub gaussians: Vec<Gaussian3D>,
    pub voxel_size: f64,
}

impl GaussianModel {
    pub fn new(voxel_size: f64) -> Self {
        Self::with_gaussians(Vec::new(), voxel_size)
    }

    pub fn with_gaussians(gaussians: Vec<Gaussian3D>, voxel_size: f64) -> Self {
        assert!(
            voxel_size > 0.0 && voxel_size.is_finite(),
            "voxel size must be positive"
        );
        Self { gaussians, voxel_size }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Round all parameters and the voxel size to `f32`, which makes the
    /// model exactly representable in a checkpoint.
    pub fn quantize_f32(&mut self) {
        for g in &mut self.gaussians {
            g.quantize_f32();
        }
        self.voxel_size = self.voxel_size as f32 as f64;
    }

    /// Bitwise equality of every field, so `-0.0 != 0.0` and `NaN == NaN`.
    pub fn bit_eq(&self, other: &GaussianModel) -> bool {
        self.voxel_size.to_bits() == other.voxel_size.to_bits()
            && self.len() == other.len()
            && self.gaussians.iter().zip(&other.gaussians).all(|(a, b)| {
                a.params()
                    .iter()
                    .zip(b.params().iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Pinhole camera with an OpenCV-style frame (x right, y down, z forward).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    /// Validating constructor. The rotation must be orthonormal with
    /// determinant +1 to within `1e-6`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate(1e-6)?;
        Ok(cam)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be at least 1x1".into()));
        }
        let values = [self.fx, self.fy, self.cx, self.cy];
        if values
            .iter()
            .chain(self.rotation.iter())
            .chain(self.translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("camera"));
        }
        let deviation = rigid_deviation(&self.rotation);
        if deviation > tol {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal with det +1 (deviation {deviation:.3e})"
            )));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target` with world `up` as the
    /// reference vertical.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_x: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidCamera("view direction parallel to up".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let fx = width as f64 / (2.0 * (fov_x / 2.0).tan());
        Self::new(
            fx,
            fx,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn to_camera_frame(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Row-major 4x4 world-to-camera matrix.
    pub fn world_to_camera(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }
}

/// Max-abs deviation of `R^T R` from identity, plus `|det R - 1|`.
pub fn rigid_deviation(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    ortho.max((r.determinant() - 1.0).abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Every eighth view of a group (by index within the group) is held out.
    pub fn for_index(index_in_group: usize) -> Self {
        if index_in_group.is_multiple_of(8) {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug)]
pub struct View {
    /// Dataset-wide view index.
    pub id: usize,
    pub camera: Camera,
    pub image: ImageBuffer,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct ViewGroup {
    pub group_id: u32,
    pub views: Vec<View>,
}

impl ViewGroup {
    pub fn train_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.split == Split::Train)
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.split == Split::Test)
    }
}

/// Point set used to seed a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, colors: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
