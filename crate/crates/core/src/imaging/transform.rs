use super::{Field, GrayImage, ImagingError, Result};

/// `(x - min) / (max - min)` elementwise.
pub fn normalize_unit(field: &Field) -> Result<GrayImage> {
    let (lo, hi) = (field.min(), field.max());
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(ImagingError::ZeroRange(lo));
    }
    let data = field
        .data()
        .iter()
        .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(field.width(), field.height(), data)
}

/// Bilinear resampling with the half-pixel (align-corners = false)
/// convention: destination pixel `d` samples source coordinate
/// `(d + 0.5) * src / dst - 0.5`, clamped to the valid index range.
pub fn resize_bilinear(field: &Field, new_width: usize, new_height: usize) -> Result<Field> {
    if new_width == 0 || new_height == 0 {
        return Err(ImagingError::InvalidData("target size must be at least 1x1".into()));
    }
    let (w, h) = (field.width(), field.height());
    if (w, h) == (new_width, new_height) {
        return Ok(field.clone());
    }
    let xs = sample_positions(w, new_width);
    let ys = sample_positions(h, new_height);
    let mut out = Vec::with_capacity(new_width * new_height);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = field.get(x0, y0) * (1.0 - tx) + field.get(x1, y0) * tx;
            let bottom = field.get(x0, y1) * (1.0 - tx) + field.get(x1, y1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    Field::new(new_width, new_height, out)
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Rotates about the image center by `degrees` (positive turns the content
/// counterclockwise as displayed, with rows running downward).
///
/// Each output pixel center is mapped back into the source and sampled
/// bilinearly; source pixels outside the raster count as 0.
pub fn rotate(image: &GrayImage, degrees: f64) -> GrayImage {
    if degrees == 0.0 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let pixel = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            image.get(x as usize, y as usize)
        }
    };
    let mut out = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let dx = i as f64 + 0.5 - cx;
            let dy = j as f64 + 0.5 - cy;
            // inverse of the display-space counterclockwise turn
            let sx = dx * cos - dy * sin + cx - 0.5;
            let sy = dx * sin + dy * cos + cy - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (tx, ty) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let v = pixel(x0, y0) * (1.0 - tx) * (1.0 - ty)
                + pixel(x0 + 1, y0) * tx * (1.0 - ty)
                + pixel(x0, y0 + 1) * (1.0 - tx) * ty
                + pixel(x0 + 1, y0 + 1) * tx * ty;
            out.push(v.clamp(0.0, 1.0));
        }
    }
    GrayImage::new(w, h, out).expect("rotation keeps dimensions and range")
}
