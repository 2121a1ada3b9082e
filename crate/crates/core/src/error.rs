use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall { width: usize, height: usize, window: usize },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("checkpoint has bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint stream truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),

    #[error("unknown view group {0}")]
    UnknownGroup(u32),

    #[error("voxel grid does not match the model it is used with")]
    StaleGrid,

    #[error("voxel sizes differ: {0} vs {1}")]
    VoxelSizeMismatch(f64, f64),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("no branch model for view group {0}")]
    MissingBranch(u32),

    #[error("missing image file {}", .0.display())]
    MissingImage(PathBuf),

    #[error("image {} is {got:?}, manifest declares {expected:?}", path.display())]
    ImageDimension {
        path: PathBuf,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("view {view}: world-to-camera rotation is not rigid (deviation {deviation:.3e})")]
    NonRigidTransform { view: usize, deviation: f64 },

    #[error("malformed manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("malformed PPM: {0}")]
    Ppm(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
