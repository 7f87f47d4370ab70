//! Blends a heat map over a grayscale slice and writes the PNG.
//!
//!     cargo run --example overlay -- /tmp/overlay.png

use splitproof::imaging::{overlay_colormap, save_rgb, GrayImage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "overlay.png".into());
    let n = 64;
    let base: Vec<f64> = (0..n * n).map(|i| 0.3 + 0.2 * ((i % n) as f64 / 6.0).sin()).collect();
    let heat: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64 - 40.0, (i / n) as f64 - 24.0);
            (-(x * x + y * y) / 120.0).exp()
        })
        .collect();
    let rgb = overlay_colormap(&GrayImage::new(n, n, heat)?, &GrayImage::new(n, n, base)?, 0.4)?;
    save_rgb(&rgb, std::path::Path::new(&out))?;
    println!("wrote {out}");
    Ok(())
}
