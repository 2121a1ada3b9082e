//! Synthetic cross-view datasets: a procedural teacher scene rendered from
//! an aerial ring and a ground ring of cameras.
//!
//! On disk a dataset is a directory holding `manifest.jsonl` (a header
//! line, then one line per view), 8-bit binary PPM images under `images/`
//! and the teacher checkpoint `teacher.xvgs`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_model;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::render::render;
use crate::scene::{logit, rigid_deviation, Camera, Gaussian3D, GaussianModel, Split, View, ViewGroup};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TEACHER_FILE: &str = "teacher.xvgs";
pub const IMAGE_DIR: &str = "images";
const MANIFEST_FORMAT: &str = "xvgs-dataset";
/// Loader tolerance on the rotation block of a world-to-camera matrix.
pub const RIGID_TOLERANCE: f64 = 1e-4;

pub const AERIAL_GROUP: u32 = 0;
pub const GROUND_GROUP: u32 = 1;

/// A circle of cameras around the vertical axis, all aimed at
/// `(0, 0, target_height)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub radius: f64,
    pub height: f64,
    pub count: usize,
    pub target_height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Radius of the circular ground patch.
    pub extent: f64,
    pub clusters: usize,
    pub boxes: usize,
    pub palette: Vec<[f64; 3]>,
    pub aerial: Ring,
    pub ground: Ring,
    pub image_size: usize,
    pub fov_degrees: f64,
    pub background: [f64; 3],
    pub voxel_size: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent: 2.0,
            clusters: 6,
            boxes: 4,
            palette: vec![
                [0.85, 0.25, 0.2],
                [0.2, 0.55, 0.85],
                [0.95, 0.8, 0.25],
                [0.3, 0.75, 0.35],
                [0.7, 0.35, 0.8],
                [0.95, 0.55, 0.15],
            ],
            aerial: Ring {
                radius: 1.6,
                height: 3.2,
                count: 16,
                target_height: 0.0,
            },
            ground: Ring {
                radius: 2.6,
                height: 0.25,
                count: 16,
                target_height: 0.5,
            },
            image_size: 64,
            fov_degrees: 60.0,
            background: [0.0, 0.0, 0.0],
            voxel_size: 0.1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad("extent must be positive");
        }
        if self.palette.is_empty() || self.palette.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("palette must be nonempty with channels in [0, 1]");
        }
        for (name, ring) in [("aerial", &self.aerial), ("ground", &self.ground)] {
            if ring.count < 8 {
                return Err(Error::Config(format!("{name} ring needs at least 8 views")));
            }
            if !(ring.radius > 0.0
                && ring.radius.is_finite()
                && ring.height.is_finite()
                && ring.target_height.is_finite())
            {
                return Err(Error::Config(format!("{name} ring is degenerate")));
            }
        }
        if self.image_size < 32 {
            return bad("image size must be at least 32");
        }
        if !(self.fov_degrees > 1.0 && self.fov_degrees < 170.0) {
            return bad("field of view must be in (1, 170) degrees");
        }
        if !(self.voxel_size > 0.0) {
            return bad("voxel size must be positive");
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut lo, mut hi) = (*first, *first);
        for p in it {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Some(Self {
            min: lo.into(),
            max: hi.into(),
        })
    }

    pub fn padded(self, pad: f64) -> Self {
        Self {
            min: self.min.map(|v| v - pad),
            max: self.max.map(|v| v + pad),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub groups: Vec<ViewGroup>,
    pub bounds: Bounds,
    pub background: [f64; 3],
}

impl Dataset {
    pub fn group(&self, group_id: u32) -> Option<&ViewGroup> {
        self.groups.iter().find(|g| g.group_id == group_id)
    }

    pub fn view_count(&self) -> usize {
        self.groups.iter().map(|g| g.views.len()).sum()
    }

    /// Views in dataset order, regardless of group.
    pub fn views(&self) -> impl Iterator<Item = &View> {
        self.groups.iter().flat_map(|g| g.views.iter())
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
    bounds: Bounds,
    background: [f64; 3],
    views: usize,
}

#[derive(Serialize, Deserialize)]
struct ViewRecord {
    id: usize,
    group: u32,
    image: String,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    world_to_camera: [[f64; 4]; 4],
    split: Split,
}

fn face_rotation(normal: Vector3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::rotation_between(&Vector3::z(), &normal).unwrap_or_else(|| {
        // Antiparallel: half turn about x.
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    });
    [q.w, q.i, q.j, q.k]
}

fn flat(position: Vector3<f64>, normal: Vector3<f64>, half_spacing: f64, color: [f64; 3], opacity: f64) -> Gaussian3D {
    Gaussian3D {
        position,
        log_scale: Vector3::new(half_spacing.ln(), half_spacing.ln(), 0.015f64.ln()),
        rotation: face_rotation(normal),
        opacity_logit: logit(opacity),
        color: Vector3::from(color).map(|c| c.clamp(0.0, 1.0)),
    }
}

fn jitter(rng: &mut ChaCha8Rng, c: [f64; 3], amount: f64) -> [f64; 3] {
    c.map(|v| (v + rng.gen_range(-amount..amount)).clamp(0.0, 1.0))
}

/// The procedural teacher: a textured ground disc, colored blobs and
/// box-shaped structures with striped walls and plain roofs.
pub fn teacher_scene(spec: &SceneSpec) -> Result<GaussianModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e = spec.extent;
    let mut gaussians = Vec::new();

    let cells = 24;
    let step = 2.0 * e / cells as f64;
    for i in 0..=cells {
        for j in 0..=cells {
            let x = -e + i as f64 * step;
            let y = -e + j as f64 * step;
            if x * x + y * y > e * e {
                continue;
            }
            let checker = if (i + j) % 2 == 0 { 0.0 } else { 0.14 };
            let base = [0.42 + checker, 0.4 + checker, 0.33 + 0.5 * checker];
            gaussians.push(flat(
                Vector3::new(x, y, 0.0),
                Vector3::z(),
                0.6 * step,
                jitter(&mut rng, base, 0.04),
                0.97,
            ));
        }
    }

    let mut footprints: Vec<(f64, f64, f64)> = Vec::new();
    let free = |x: f64, y: f64, r: f64, taken: &[(f64, f64, f64)]| {
        taken
            .iter()
            .all(|&(cx, cy, cr)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() > r + cr + 0.1)
    };

    for b in 0..spec.boxes {
        let color = spec.palette[b % spec.palette.len()];
        let roof = jitter(
            &mut rng,
            [color[0] * 0.6 + 0.35, color[1] * 0.6 + 0.35, color[2] * 0.6 + 0.35],
            0.05,
        );
        let (sx, sy, h): (f64, f64, f64) = (
            rng.gen_range(0.35..0.7),
            rng.gen_range(0.35..0.7),
            rng.gen_range(0.5..1.0),
        );
        let r = 0.5 * (sx * sx + sy * sy).sqrt();
        let mut placed = None;
        for _ in 0..200 {
            let (x, y) = (rng.gen_range(-0.6 * e..0.6 * e), rng.gen_range(-0.6 * e..0.6 * e));
            if x * x + y * y < (0.65 * e).powi(2) && free(x, y, r, &footprints) {
                placed = Some((x, y));
                break;
            }
        }
        let Some((bx, by)) = placed else { continue };
        footprints.push((bx, by, r));

        let spacing = 0.1;
        let nz = (h / spacing).ceil() as usize;
        // Walls: normal, in-plane axis, half-length along it.
        let walls = [
            (Vector3::x(), Vector3::y(), sx / 2.0, sy / 2.0),
            (-Vector3::x(), Vector3::y(), sx / 2.0, sy / 2.0),
            (Vector3::y(), Vector3::x(), sy / 2.0, sx / 2.0),
            (-Vector3::y(), Vector3::x(), sy / 2.0, sx / 2.0),
        ];
        for (normal, axis, offset, half) in walls {
            let nu = ((2.0 * half) / spacing).ceil() as usize;
            for u in 0..=nu {
                for v in 0..=nz {
                    let along = -half + 2.0 * half * u as f64 / nu as f64;
                    let z = h * v as f64 / nz as f64;
                    let p = Vector3::new(bx, by, 0.0) + normal * offset + axis * along + Vector3::z() * z;
                    let stripe = if v % 3 == 1 { 0.45 } else { 1.0 };
                    let c = jitter(&mut rng, color.map(|k| k * stripe), 0.03);
                    gaussians.push(flat(p, normal, 0.6 * spacing, c, 0.97));
                }
            }
        }
        let (nu, nv) = ((sx / spacing).ceil() as usize, (sy / spacing).ceil() as usize);
        for u in 0..=nu {
            for v in 0..=nv {
                let p = Vector3::new(
                    bx - sx / 2.0 + sx * u as f64 / nu as f64,
                    by - sy / 2.0 + sy * v as f64 / nv as f64,
                    h,
                );
                gaussians.push(flat(p, Vector3::z(), 0.6 * spacing, jitter(&mut rng, roof, 0.03), 0.97));
            }
        }
    }

    for c in 0..spec.clusters {
        let color = spec.palette[(c + spec.boxes) % spec.palette.len()];
        let mut center = None;
        for _ in 0..200 {
            let (x, y) = (rng.gen_range(-0.75 * e..0.75 * e), rng.gen_range(-0.75 * e..0.75 * e));
            if x * x + y * y < (0.8 * e).powi(2) && free(x, y, 0.25, &footprints) {
                center = Some((x, y));
                break;
            }
        }
        let Some((cx, cy)) = center else { continue };
        footprints.push((cx, cy, 0.25));
        for _ in 0..12 {
            let p = Vector3::new(
                cx + rng.gen_range(-0.18..0.18),
                cy + rng.gen_range(-0.18..0.18),
                rng.gen_range(0.06..0.35),
            );
            let mut g = Gaussian3D::isotropic(
                p,
                rng.gen_range(0.04..0.09),
                0.9,
                Vector3::from(jitter(&mut rng, color, 0.08)),
            );
            g.log_scale.z += rng.gen_range(-0.3..0.3);
            gaussians.push(g);
        }
    }

    let mut model = GaussianModel::with_gaussians(gaussians, spec.voxel_size);
    model.quantize_f32();
    Ok(model)
}

/// Aerial views first (group 0), then ground views (group 1).
pub fn ring_cameras(spec: &SceneSpec) -> Result<Vec<(u32, Camera)>> {
    let fov = spec.fov_degrees.to_radians();
    let mut out = Vec::new();
    for (group, ring, phase) in [(AERIAL_GROUP, &spec.aerial, 0.0), (GROUND_GROUP, &spec.ground, 0.5)] {
        for i in 0..ring.count {
            let a = std::f64::consts::TAU * (i as f64 + phase) / ring.count as f64;
            let eye = Vector3::new(ring.radius * a.cos(), ring.radius * a.sin(), ring.height);
            let target = Vector3::new(0.0, 0.0, ring.target_height);
            out.push((
                group,
                Camera::look_at(eye, target, Vector3::z(), fov, spec.image_size, spec.image_size)?,
            ));
        }
    }
    Ok(out)
}

/// Write a dataset for `spec` into `out` and return it in memory.
pub fn generate_synthetic(spec: &SceneSpec, out: &Path) -> Result<Dataset> {
    let teacher = teacher_scene(spec)?;
    let cameras = ring_cameras(spec)?;
    fs::create_dir_all(out.join(IMAGE_DIR))?;

    let bounds = Bounds::of_points(teacher.gaussians.iter().map(|g| &g.position))
        .ok_or(Error::Empty("teacher scene"))?
        .padded(0.1);
    let mut groups: BTreeMap<u32, Vec<View>> = BTreeMap::new();
    let mut lines = Vec::with_capacity(cameras.len() + 1);
    lines.push(
        serde_json::to_string(&ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            bounds,
            background: spec.background,
            views: cameras.len(),
        })
        .expect("header serializes"),
    );

    for (id, (group, camera)) in cameras.into_iter().enumerate() {
        let views = groups.entry(group).or_default();
        let split = Split::for_index(views.len());
        let rel = format!("{IMAGE_DIR}/view_{id:03}.ppm");
        let bytes = render(&teacher, &camera, spec.background).to_ppm_bytes();
        fs::write(out.join(&rel), &bytes)?;
        let image = ImageBuffer::from_ppm_bytes(&bytes)?;
        lines.push(
            serde_json::to_string(&ViewRecord {
                id,
                group,
                image: rel,
                width: camera.width,
                height: camera.height,
                fx: camera.fx,
                fy: camera.fy,
                cx: camera.cx,
                cy: camera.cy,
                world_to_camera: camera.world_to_camera(),
                split,
            })
            .expect("view record serializes"),
        );
        views.push(View {
            id,
            camera,
            image,
            split,
        });
    }

    let mut f = fs::File::create(out.join(MANIFEST_FILE))?;
    for line in &lines {
        writeln!(f, "{line}")?;
    }
    save_model(&teacher, &out.join(TEACHER_FILE))?;
    Ok(Dataset {
        groups: groups
            .into_iter()
            .map(|(group_id, views)| ViewGroup { group_id, views })
            .collect(),
        bounds,
        background: spec.background,
    })
}

fn camera_from_record(rec: &ViewRecord) -> Result<Camera> {
    let m = &rec.world_to_camera;
    let rotation = Matrix3::from_fn(|r, c| m[r][c]);
    let deviation = rigid_deviation(&rotation);
    let bottom_ok = m[3] == [0.0, 0.0, 0.0, 1.0];
    if !(deviation <= RIGID_TOLERANCE) || !bottom_ok {
        return Err(Error::NonRigidTransform {
            view: rec.id,
            deviation: if bottom_ok { deviation } else { f64::INFINITY },
        });
    }
    let cam = Camera {
        fx: rec.fx,
        fy: rec.fy,
        cx: rec.cx,
        cy: rec.cy,
        width: rec.width,
        height: rec.height,
        rotation,
        translation: Vector3::new(m[0][3], m[1][3], m[2][3]),
    };
    cam.validate(RIGID_TOLERANCE)?;
    Ok(cam)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingImage(manifest_path.clone()),
        _ => Error::Io(e),
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(Error::Manifest {
        line: 1,
        msg: "empty manifest".into(),
    })?;
    let header: ManifestHeader = serde_json::from_str(first).map_err(|e| Error::Manifest {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.format != MANIFEST_FORMAT || header.version != 1 {
        return Err(Error::Manifest {
            line: 1,
            msg: format!("unsupported manifest {} v{}", header.format, header.version),
        });
    }

    let mut groups: BTreeMap<u32, Vec<View>> = BTreeMap::new();
    for (n, line) in lines {
        let rec: ViewRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: n + 1,
            msg: e.to_string(),
        })?;
        let camera = camera_from_record(&rec)?;
        let path: PathBuf = dir.join(&rec.image);
        if !path.is_file() {
            return Err(Error::MissingImage(path));
        }
        let image = ImageBuffer::read_ppm(&path)?;
        if image.dims() != (rec.width, rec.height) {
            return Err(Error::ImageDimension {
                path,
                expected: (rec.width, rec.height),
                got: image.dims(),
            });
        }
        groups.entry(rec.group).or_default().push(View {
            id: rec.id,
            camera,
            image,
            split: rec.split,
        });
    }
    let count: usize = groups.values().map(Vec::len).sum();
    if count != header.views {
        return Err(Error::Manifest {
            line: 1,
            msg: format!("header declares {} views, found {count}", header.views),
        });
    }
    Ok(Dataset {
        groups: groups
            .into_iter()
            .map(|(group_id, views)| ViewGroup { group_id, views })
            .collect(),
        bounds: header.bounds,
        background: header.background,
    })
}
