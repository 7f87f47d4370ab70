use super::{check_dims, GrayImage, ImagingError, Result};

/// Row-major RGB raster with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(ImagingError::InvalidData(format!(
                "{} pixels for a {width}x{height} raster",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }
}

/// Piecewise-linear blue -> cyan -> yellow -> red map.
///
/// | t in          | R                   | G                    | B                 |
/// |---------------|---------------------|----------------------|-------------------|
/// | [0, 0.375]    | 0                   | t / 0.375            | 1                 |
/// | [0.375, 0.625]| (t - 0.375) / 0.25  | 1                    | 1 - (t-0.375)/0.25|
/// | [0.625, 1]    | 1                   | 1 - (t-0.625)/0.375  | 0                 |
///
/// Inputs are clamped to `[0, 1]` first.
pub fn heat_color(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    if t <= 0.375 {
        [0.0, t / 0.375, 1.0]
    } else if t <= 0.625 {
        let s = (t - 0.375) / 0.25;
        [s, 1.0, 1.0 - s]
    } else {
        let s = (t - 0.625) / 0.375;
        [1.0, 1.0 - s, 0.0]
    }
}

/// `alpha * heat_color(heat) + (1 - alpha) * base`, per channel.
pub fn overlay_colormap(heatmap: &GrayImage, base: &GrayImage, alpha: f64) -> Result<RgbImage> {
    check_dims((heatmap.width(), heatmap.height()), (base.width(), base.height()))?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ImagingError::InvalidData(format!("alpha {alpha} outside [0, 1]")));
    }
    let data = heatmap
        .data()
        .iter()
        .zip(base.data())
        .map(|(&h, &g)| heat_color(h).map(|c| alpha * c + (1.0 - alpha) * g))
        .collect();
    RgbImage::new(heatmap.width(), heatmap.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_breakpoints() {
        assert_eq!(heat_color(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(heat_color(0.375), [0.0, 1.0, 1.0]);
        assert_eq!(heat_color(0.625), [1.0, 1.0, 0.0]);
        assert_eq!(heat_color(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(heat_color(0.5), [0.5, 1.0, 0.5]);
    }

    #[test]
    fn continuous_at_breakpoints() {
        for b in [0.375, 0.625] {
            let (l, r) = (heat_color(b - 1e-9), heat_color(b + 1e-9));
            for c in 0..3 {
                assert!((l[c] - r[c]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn overlay_blending() {
        let heat = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let base = GrayImage::new(2, 1, vec![0.3, 0.6]).unwrap();
        let plain = overlay_colormap(&heat, &base, 0.0).unwrap();
        assert_eq!(plain.data(), &[[0.3; 3], [0.6; 3]]);
        let full = overlay_colormap(&heat, &base, 1.0).unwrap();
        assert_eq!(full.data(), &[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
        let half = overlay_colormap(&heat, &base, 0.5).unwrap();
        assert!(half.data()[0][2] > half.data()[0][0]);
        assert!(half.data()[1][0] > half.data()[1][2]);
        let small = GrayImage::new(1, 1, vec![0.0]).unwrap();
        assert!(matches!(overlay_colormap(&heat, &small, 0.5), Err(ImagingError::DimMismatch(..))));
    }
}
