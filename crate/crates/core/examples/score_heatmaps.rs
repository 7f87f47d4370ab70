//! Scores heat maps against rasterized nodule masks and prints the CSV.
//!
//!     cargo run --example score_heatmaps

use splitproof::cam::HeatMap;
use splitproof::imaging::rasterize_mask;
use splitproof::interpret::{score_batch, ScoreItem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = 16;
    let mask = rasterize_mask(&[(4.0, 4.0), (11.0, 5.0), (10.0, 11.0), (5.0, 10.0)], size, size)?;
    let peak_at = |cx: f64, cy: f64| {
        let data = (0..size * size)
            .map(|i| {
                let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
                (-((x - cx).powi(2) + (y - cy).powi(2)) / 18.0).exp()
            })
            .collect();
        HeatMap::new(size, size, data)
    };
    let items = vec![
        ScoreItem { record_id: "on_nodule".into(), model_tag: "fair".into(), heatmap: peak_at(7.5, 7.5)?, mask: mask.clone() },
        ScoreItem { record_id: "off_nodule".into(), model_tag: "unfair".into(), heatmap: peak_at(2.0, 14.0)?, mask: mask.clone() },
        ScoreItem {
            record_id: "flat".into(),
            model_tag: "unfair".into(),
            heatmap: HeatMap::new(size, size, vec![0.5; size * size])?,
            mask,
        },
    ];
    let report = score_batch(&items);
    report.write_csv(std::io::stdout())?;
    println!("{}", report.sidecar_json()?);
    Ok(())
}
