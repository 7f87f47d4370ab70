//! Raster types and the pixel-level utilities shared by the CAM and
//! scoring code: PNG I/O, rotation, resizing, normalization, polygon
//! rasterization and the heat colormap.

mod colormap;
mod io;
mod rasterize;
mod transform;

use thiserror::Error;

pub use colormap::{heat_color, overlay_colormap, RgbImage};
pub use io::{load_image, load_mask, save_image, save_mask, save_rgb};
pub use rasterize::rasterize_mask;
pub use transform::{normalize_unit, resize_bilinear, rotate};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("cannot read {path}: {reason}")]
    UnreadableFile { path: String, reason: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("polygon is degenerate (fewer than 3 distinct, non-collinear points)")]
    DegeneratePolygon,
    #[error("field has zero range (all values equal {0})")]
    ZeroRange(f64),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),
    #[error("invalid raster: {0}")]
    InvalidData(String),
    #[error("cannot write {path}: {reason}")]
    WriteFailed { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Row-major raster of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidData("zero-sized raster".into()));
        }
        if data.len() != width * height {
            return Err(ImagingError::InvalidData(format!(
                "{} values for a {width}x{height} raster",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(ImagingError::InvalidData(format!("non-finite value {v}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage(Field);

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_field(Field::new(width, height, data)?)
    }

    pub fn from_field(field: Field) -> Result<Self> {
        if let Some(v) = field.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImagingError::InvalidData(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self(field))
    }

    /// Clamps every value of `field` into `[0, 1]`.
    pub fn clamped(field: Field) -> Self {
        let Field { width, height, data } = field;
        Self(Field {
            width,
            height,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub fn as_field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    /// Bilinear resize; stays within `[0, 1]`.
    pub fn resize(&self, width: usize, height: usize) -> Result<GrayImage> {
        Ok(GrayImage::clamped(resize_bilinear(&self.0, width, height)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(ImagingError::InvalidData(format!(
                "{} mask cells for a {width}x{height} raster",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Mask as `{0.0, 1.0}` reals.
    pub fn to_reals(&self) -> Vec<f64> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Cells set in either mask.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(ImagingError::DimMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        })
    }
}

pub(crate) fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(ImagingError::DimMismatch(a.0, a.1, b.0, b.1));
    }
    Ok(())
}
