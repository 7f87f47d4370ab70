use serde::{Deserialize, Serialize};

use super::ToyError;
use crate::cam::HeatMap;
use crate::imaging::{self, Field};

/// Per-pixel logistic scorer: `P(malignant) = sigmoid(w . x + bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ToyModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.logit(x) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ToyModel,
    /// Objective before each update, then after the last one.
    pub loss_history: Vec<f64>,
}

/// Row-major design matrix.
pub struct Samples<'a> {
    pub rows: &'a [f64],
    pub dim: usize,
    pub labels: &'a [bool],
}

impl Samples<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy plus `l2 / 2 * |w|^2`, and its gradient with respect
/// to `(weights, bias)`.
///
/// With `center = Some(mu)` every sample is read as `x - mu`; the trainer
/// works in those coordinates and folds `mu` back into the bias at the end.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    data: &Samples,
    l2: f64,
    center: Option<&[f64]>,
) -> (f64, Vec<f64>, f64) {
    let n = data.len() as f64;
    let mut grad_w = vec![0.0; data.dim];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    let offset = center.map_or(0.0, |mu| dot(weights, mu));
    for i in 0..data.len() {
        let x = data.row(i);
        let z = dot(weights, x) - offset + bias;
        let y = if data.labels[i] { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        grad_b += r;
        for (g, xv) in grad_w.iter_mut().zip(x) {
            *g += r * xv;
        }
    }
    if let Some(mu) = center {
        for (g, m) in grad_w.iter_mut().zip(mu) {
            *g -= grad_b * m;
        }
    }
    loss /= n;
    grad_b /= n;
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * dot(weights, weights);
    (loss, grad_w, grad_b)
}

/// Full-batch gradient descent on the regularized cross-entropy.
///
/// Inputs are mean-centered internally (an affine reparametrization of the
/// bias), which leaves the objective unchanged but keeps a fixed step size
/// stable on raw intensities.
pub fn train_classifier(data: &Samples, hyper: &TrainHyper) -> Result<TrainedModel, ToyError> {
    descend(data, hyper, |_, _| {})
}

/// Gradient descent loop; `visit` sees the model in raw coordinates before
/// each update and after the last.
fn descend(
    data: &Samples,
    hyper: &TrainHyper,
    mut visit: impl FnMut(usize, &ToyModel),
) -> Result<TrainedModel, ToyError> {
    for class in [false, true] {
        let count = data.labels.iter().filter(|&&l| l == class).count();
        if count < 2 {
            return Err(ToyError::TooFewExamples { class, count });
        }
    }
    let n = data.len() as f64;
    let mut mu = vec![0.0; data.dim];
    for i in 0..data.len() {
        for (m, x) in mu.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);

    let mut w = vec![0.0; data.dim];
    let mut c = 0.0;
    let mut loss_history = Vec::with_capacity(hyper.epochs + 1);
    for epoch in 0..=hyper.epochs {
        let (loss, gw, gb) = loss_and_gradient(&w, c, data, hyper.l2, Some(&mu));
        if !loss.is_finite() {
            return Err(ToyError::Diverged { epoch });
        }
        loss_history.push(loss);
        visit(
            epoch,
            &ToyModel {
                weights: w.clone(),
                bias: c - dot(&w, &mu),
            },
        );
        if epoch == hyper.epochs {
            break;
        }
        // gradient with respect to the centered intercept
        let gc = gb;
        let gw_centered: Vec<f64> = gw.iter().zip(&mu).map(|(g, m)| g + gb * m).collect();
        for (wi, g) in w.iter_mut().zip(&gw_centered) {
            *wi -= hyper.learning_rate * g;
        }
        c -= hyper.learning_rate * gc;
    }
    let bias = c - dot(&w, &mu);
    Ok(TrainedModel {
        model: ToyModel { weights: w, bias },
        loss_history,
    })
}

/// Mean cross-entropy of `model` on `data`, without the penalty.
pub fn log_loss(model: &ToyModel, data: &Samples) -> f64 {
    let total: f64 = (0..data.len())
        .map(|i| {
            let z = model.logit(data.row(i));
            softplus(z) - if data.labels[i] { z } else { 0.0 }
        })
        .sum();
    total / data.len() as f64
}

/// Like [`train_classifier`], but returns the snapshot with the lowest
/// `validation` cross-entropy (earliest on ties) together with its epoch.
pub fn train_with_selection(
    data: &Samples,
    validation: &Samples,
    hyper: &TrainHyper,
) -> Result<(TrainedModel, usize), ToyError> {
    if validation.is_empty() {
        return train_classifier(data, hyper).map(|t| (t, hyper.epochs));
    }
    let mut best: Option<(f64, usize, ToyModel)> = None;
    let trained = descend(data, hyper, |epoch, model| {
        let loss = log_loss(model, validation);
        if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
            best = Some((loss, epoch, model.clone()));
        }
    })?;
    let (_, epoch, model) = best.expect("at least one snapshot");
    Ok((
        TrainedModel {
            model,
            loss_history: trained.loss_history,
        },
        epoch,
    ))
}

/// Fraction of samples whose predicted class matches the label.
pub fn accuracy(model: &ToyModel, data: &Samples) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let hits = (0..data.len()).filter(|&i| model.predict(data.row(i)) == data.labels[i]).count();
    hits as f64 / data.len() as f64
}

/// `normalize_unit(|w * x|)` on the image grid.
pub fn saliency_map(model: &ToyModel, image: &[f64], size: usize) -> Result<HeatMap, ToyError> {
    if image.len() != model.weights.len() || image.len() != size * size {
        return Err(ToyError::DimMismatch {
            weights: model.weights.len(),
            image: image.len(),
        });
    }
    let contributions: Vec<f64> = model.weights.iter().zip(image).map(|(w, x)| (w * x).abs()).collect();
    let field = Field::new(size, size, contributions).map_err(|e| ToyError::Imaging(e.to_string()))?;
    match imaging::normalize_unit(&field) {
        Ok(unit) => Ok(HeatMap::from_gray(unit)),
        Err(imaging::ImagingError::ZeroRange(_)) => Err(ToyError::ZeroRange),
        Err(e) => Err(ToyError::Imaging(e.to_string())),
    }
}
