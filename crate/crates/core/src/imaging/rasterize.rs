use super::{BinaryMask, ImagingError, Result};

/// Fills the pixels whose centers fall inside `polygon` (even-odd rule).
///
/// Pixel `(i, j)` is tested at `(i + 0.5, j + 0.5)`. A center on a left or
/// top edge is inside, one on a right or bottom edge is outside, so
/// polygons sharing an edge never both claim a pixel. The polygon closes
/// implicitly from the last vertex back to the first. Vertices outside the
/// raster are allowed and simply clip.
pub fn rasterize_mask(polygon: &[(f64, f64)], width: usize, height: usize) -> Result<BinaryMask> {
    if is_degenerate(polygon) {
        return Err(ImagingError::DegeneratePolygon);
    }
    let mut mask = BinaryMask::empty(width, height);
    let mut crossings: Vec<f64> = Vec::with_capacity(polygon.len());
    for row in 0..height {
        let yc = row as f64 + 0.5;
        crossings.clear();
        let mut prev = polygon[polygon.len() - 1];
        for &cur in polygon {
            let ((xi, yi), (xj, yj)) = (cur, prev);
            if (yi > yc) != (yj > yc) {
                crossings.push((xj - xi) * (yc - yi) / (yj - yi) + xi);
            }
            prev = cur;
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        for col in 0..width {
            let xc = col as f64 + 0.5;
            // crossings strictly to the right of the center
            let right = crossings.len() - crossings.partition_point(|&x| x <= xc);
            if right % 2 == 1 {
                mask.set(col, row, true);
            }
        }
    }
    Ok(mask)
}

fn is_degenerate(polygon: &[(f64, f64)]) -> bool {
    if polygon.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return true;
    }
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for &p in polygon {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    if distinct.len() < 3 {
        return true;
    }
    let (ax, ay) = distinct[0];
    let (bx, by) = distinct[1];
    !distinct[2..]
        .iter()
        .any(|&(cx, cy)| (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) != 0.0)
}
