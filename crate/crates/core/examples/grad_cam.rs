//! Builds a Grad-CAM heat map from a small synthetic feature/gradient pair
//! with each reduction variant.
//!
//!     cargo run --example grad_cam

use splitproof::cam::{channel_weights, grad_cam, CamVariant, ChannelStack};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (c, h, w) = (3, 4, 4);
    // channel k responds to a blob centered at column k
    let features: Vec<f64> = (0..c * h * w)
        .map(|i| {
            let (k, x, y) = (i / (h * w), i % w, (i / w) % h);
            (-(((x as f64 - k as f64).powi(2) + (y as f64 - 1.5).powi(2)) / 2.0)).exp()
        })
        .collect();
    let grads: Vec<f64> = (0..c * h * w).map(|i| [1.0, 0.2, -0.5][i / (h * w)]).collect();
    let features = ChannelStack::new(c, h, w, features)?;
    let grads = ChannelStack::new(c, h, w, grads)?;
    println!("channel weights {:?}", channel_weights(&grads));

    for variant in [CamVariant::ReluSum, CamVariant::ChannelMean, CamVariant::ChannelMax] {
        let heat = grad_cam(&features, &grads, variant, 8, 8)?;
        println!("\n{variant}");
        for row in heat.data().chunks(8) {
            println!("{}", row.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" "));
        }
    }
    Ok(())
}
