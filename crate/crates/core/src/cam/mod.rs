//! Class activation maps from exported last-convolutional-block features
//! and their gradients.
//!
//! The pipeline is: per-channel spatial mean of the gradients gives one
//! weight per channel; weighted channels are combined per pixel (see
//! [`CamVariant`]); the combined map is min-max normalized and then
//! resized to the input image size.

mod tensor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, Field, GrayImage, ImagingError};

pub use tensor::{load_tensor, read_tensor, save_tensor, write_tensor, Tensor, MAGIC};

#[derive(Debug, Error)]
pub enum CamError {
    #[error("{weights} weights for {channels} channels")]
    WeightCountMismatch { weights: usize, channels: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor container: {0}")]
    Container(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CamError>;

/// `C x H x W` activations (or gradients), channel-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

pub type FeatureStack = ChannelStack;
pub type GradientStack = ChannelStack;

impl ChannelStack {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(CamError::ShapeMismatch("empty stack".into()));
        }
        if data.len() != channels * height * width {
            return Err(CamError::ShapeMismatch(format!(
                "{} values for shape [{channels}, {height}, {width}]",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CamError::ShapeMismatch("non-finite value in stack".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape.as_slice() {
            &[c, h, w] => Self::new(c, h, w, t.data.iter().map(|&v| v as f64).collect()),
            other => Err(CamError::ShapeMismatch(format!("expected [C, H, W], got {other:?}"))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.channels, self.height, self.width],
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.channels, self.height, self.width, self.data.iter().map(|v| v * k).collect())
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// How weighted channels are reduced to one map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CamVariant {
    /// `max(0, sum_c w_c * A_c)`.
    #[default]
    #[serde(rename = "relu-sum")]
    ReluSum,
    /// `mean_c(w_c * A_c)`.
    #[serde(rename = "mean")]
    ChannelMean,
    /// `max_c(w_c * A_c)`.
    #[serde(rename = "max")]
    ChannelMax,
}

impl CamVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            CamVariant::ReluSum => "relu-sum",
            CamVariant::ChannelMean => "mean",
            CamVariant::ChannelMax => "max",
        }
    }
}

impl fmt::Display for CamVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CamVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "relu-sum" => Ok(CamVariant::ReluSum),
            "mean" => Ok(CamVariant::ChannelMean),
            "max" => Ok(CamVariant::ChannelMax),
            other => Err(format!("unknown CAM variant {other:?} (relu-sum, mean, max)")),
        }
    }
}

/// Normalized activation field with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap(GrayImage);

impl HeatMap {
    pub fn from_gray(image: GrayImage) -> Self {
        Self(image)
    }

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> imaging::Result<Self> {
        GrayImage::new(width, height, data).map(Self)
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn as_gray(&self) -> &GrayImage {
        &self.0
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.height(), self.width()],
            data: self.data().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Reads a `[H, W]` container; values are clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape.as_slice() {
            &[h, w] => {
                let field = Field::new(w, h, t.data.iter().map(|&v| v as f64).collect())?;
                Ok(Self(GrayImage::clamped(field)))
            }
            other => Err(CamError::ShapeMismatch(format!("expected [H, W], got {other:?}"))),
        }
    }
}

/// Spatial mean of each gradient channel.
pub fn channel_weights(grads: &GradientStack) -> Vec<f64> {
    let plane = (grads.height * grads.width) as f64;
    (0..grads.channels)
        .map(|c| grads.channel(c).iter().sum::<f64>() / plane)
        .collect()
}

/// Combines weighted feature channels pixel by pixel.
pub fn cam_raw(features: &FeatureStack, weights: &[f64], variant: CamVariant) -> Result<Field> {
    if weights.len() != features.channels {
        return Err(CamError::WeightCountMismatch {
            weights: weights.len(),
            channels: features.channels,
        });
    }
    let plane = features.height * features.width;
    let weighted = |c: usize, p: usize| weights[c] * features.data[c * plane + p];
    let out: Vec<f64> = (0..plane)
        .map(|p| match variant {
            CamVariant::ReluSum => (0..features.channels).map(|c| weighted(c, p)).sum::<f64>().max(0.0),
            CamVariant::ChannelMean => {
                (0..features.channels).map(|c| weighted(c, p)).sum::<f64>() / features.channels as f64
            }
            CamVariant::ChannelMax => (0..features.channels)
                .map(|c| weighted(c, p))
                .fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    Ok(Field::new(features.width, features.height, out)?)
}

/// Min-max normalizes `raw`, then resizes it bilinearly.
pub fn make_heatmap(raw: &Field, out_width: usize, out_height: usize) -> Result<HeatMap> {
    let unit = imaging::normalize_unit(raw)?;
    Ok(HeatMap(unit.resize(out_width, out_height)?))
}

/// Full CAM from a feature stack and its gradients.
pub fn grad_cam(
    features: &FeatureStack,
    grads: &GradientStack,
    variant: CamVariant,
    out_width: usize,
    out_height: usize,
) -> Result<HeatMap> {
    if features.shape() != grads.shape() {
        return Err(CamError::ShapeMismatch(format!(
            "features {:?} vs gradients {:?}",
            features.shape(),
            grads.shape()
        )));
    }
    let raw = cam_raw(features, &channel_weights(grads), variant)?;
    make_heatmap(&raw, out_width, out_height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack(c: usize, h: usize, w: usize, data: &[f64]) -> ChannelStack {
        ChannelStack::new(c, h, w, data.to_vec()).unwrap()
    }

    #[test]
    fn weights_are_spatial_means() {
        assert_eq!(channel_weights(&stack(1, 2, 2, &[1.0; 4])), vec![1.0]);
        assert_eq!(channel_weights(&stack(1, 2, 2, &[1.0, 2.0, 3.0, 4.0])), vec![2.5]);
        let w = channel_weights(&stack(2, 1, 2, &[3.0, 5.0, -1.0, -1.0]));
        assert_eq!(w, vec![4.0, -1.0]);
    }

    #[test]
    fn raw_map_examples() {
        let a = stack(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cam_raw(&a, &[1.0], CamVariant::ReluSum).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cam_raw(&a, &[-1.0], CamVariant::ReluSum).unwrap().data(), &[0.0; 4]);
        assert_eq!(cam_raw(&a, &[1.0], CamVariant::ChannelMean).unwrap().data(), a.channel(0));

        let two = stack(2, 1, 1, &[2.0, 1.0]);
        assert_eq!(cam_raw(&two, &[1.0, -1.0], CamVariant::ChannelMax).unwrap().data(), &[2.0]);
        assert_eq!(cam_raw(&two, &[1.0, -1.0], CamVariant::ChannelMean).unwrap().data(), &[0.5]);
        assert_eq!(cam_raw(&two, &[1.0, -1.0], CamVariant::ReluSum).unwrap().data(), &[1.0]);
        assert!(matches!(
            cam_raw(&two, &[1.0], CamVariant::ReluSum),
            Err(CamError::WeightCountMismatch { weights: 1, channels: 2 })
        ));
    }

    #[test]
    fn heatmap_examples() {
        let raw = Field::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let h = make_heatmap(&raw, 2, 2).unwrap();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in h.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let constant = Field::filled(2, 2, 0.4).unwrap();
        assert!(matches!(make_heatmap(&constant, 2, 2), Err(CamError::Imaging(ImagingError::ZeroRange(_)))));
    }

    #[test]
    fn variant_names() {
        for v in [CamVariant::ReluSum, CamVariant::ChannelMean, CamVariant::ChannelMax] {
            assert_eq!(v.to_string().parse::<CamVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
        assert!("avg".parse::<CamVariant>().is_err());
    }

    #[test]
    fn grad_cam_shape_check() {
        let f = stack(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = stack(1, 1, 4, &[1.0; 4]);
        assert!(matches!(grad_cam(&f, &g, CamVariant::ReluSum, 2, 2), Err(CamError::ShapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn relu_sum_is_non_negative(data in prop::collection::vec(-5.0f64..5.0, 12), w in prop::collection::vec(-2.0f64..2.0, 3)) {
            let s = stack(3, 2, 2, &data);
            let raw = cam_raw(&s, &w, CamVariant::ReluSum).unwrap();
            prop_assert!(raw.data().iter().all(|&v| v >= 0.0));
        }
    }
}
