//! Float RGB image buffers and binary PPM (P6, 8-bit) I/O.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `height x width x 3` buffer of unit-range values.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self { width, height, pixels }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::SizeMismatch {
                expected: width * height * 3,
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn ensure_same_dims(&self, other: &ImageBuffer) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Snap every value to the nearest 8-bit level, i.e. what a PPM
    /// write-then-read would produce.
    pub fn quantized(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| quantize(v) as f64 / 255.0).collect(),
        }
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&v| quantize(v)));
        out
    }

    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P6" {
            return Err(Error::Ppm(format!(
                "expected P6, found {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let width = parse_usize(next_token(bytes, &mut pos)?)?;
        let height = parse_usize(next_token(bytes, &mut pos)?)?;
        let maxval = parse_usize(next_token(bytes, &mut pos)?)?;
        if maxval != 255 {
            return Err(Error::Ppm(format!("only 8-bit PPM is supported, maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let n = width * height * 3;
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Ppm(format!("raster truncated: need {n} bytes")))?;
        Ok(Self {
            width,
            height,
            pixels: raster.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_ppm_bytes())?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_ppm_bytes(&bytes)
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Ppm("header truncated".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_usize(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Ppm(format!("bad header field {:?}", String::from_utf8_lossy(tok))))
}
