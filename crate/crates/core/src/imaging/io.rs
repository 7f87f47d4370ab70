use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::{BinaryMask, GrayImage, ImagingError, Result, RgbImage};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Loads an 8- or 16-bit PNG as intensities in `[0, 1]`.
///
/// Values are divided by the bit-depth maximum. Color images are collapsed
/// to luminance (Rec. 709 weights) and alpha channels are dropped.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let unreadable = |reason: String| ImagingError::UnreadableFile {
        path: path.display().to_string(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| unreadable(e.to_string()))?;
    if !bytes.starts_with(PNG_SIGNATURE) {
        let kind = image::guess_format(&bytes).map_or_else(|_| "unknown".to_string(), |f| format!("{f:?}"));
        return Err(ImagingError::UnsupportedFormat(format!("{} is not a PNG ({kind})", path.display())));
    }
    let decoded =
        image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| unreadable(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(img) => img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(img) => img.into_raw().into_iter().map(|b| b as f64 / 65535.0).collect(),
        img @ (DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_)) => {
            img.to_luma8().into_raw().into_iter().map(|b| b as f64 / 255.0).collect()
        }
        img @ (DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)) => {
            img.to_luma16().into_raw().into_iter().map(|b| b as f64 / 65535.0).collect()
        }
        other => return Err(ImagingError::UnsupportedFormat(format!("{:?}", other.color()))),
    };
    GrayImage::new(w, h, data)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn write_png(path: &Path, img: DynamicImage) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| ImagingError::WriteFailed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
}

/// Writes an 8-bit grayscale PNG, rounding half up.
pub fn save_image(image: &GrayImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_byte(v)).collect();
    let buf = image::GrayImage::from_raw(image.width() as u32, image.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    write_png(path, DynamicImage::ImageLuma8(buf))
}

/// Writes a 24-bit RGB PNG.
pub fn save_rgb(image: &RgbImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = image.data().iter().flat_map(|px| px.map(to_byte)).collect();
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    write_png(path, DynamicImage::ImageRgb8(buf))
}

/// Writes a mask as 8-bit grayscale with values {0, 255}.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    write_png(path, DynamicImage::ImageLuma8(buf))
}

/// Any non-zero intensity counts as set.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_image(path)?;
    BinaryMask::new(img.width(), img.height(), img.data().iter().map(|&v| v > 0.0).collect())
}
