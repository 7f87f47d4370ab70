use rand_distr::{Distribution, Normal};

use super::{ToyConfig, ToyError};
use crate::imaging::BinaryMask;
use crate::manifest::ClassLabel;
use crate::rng::SplitRng;

const FINGERPRINT_TAG: u64 = 0x0f1e_0000;
const IMAGE_TAG: u64 = 0x1a6e_0000_0000;

/// One synthetic image with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub record_id: String,
    pub patient_id: String,
    pub label: ClassLabel,
    /// Row-major intensities in `[0, 1]`, `image_size^2` values.
    pub pixels: Vec<f64>,
    /// Lesion support; empty for benign images.
    pub lesion_mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub image_size: usize,
    pub images: Vec<ToyImage>,
}

impl Cohort {
    pub fn patients(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.images.iter().map(|i| i.patient_id.as_str()).collect();
        ids.dedup();
        ids
    }
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:03}")
}

/// Patients alternate between benign (even index) and malignant (odd).
pub fn patient_label(index: usize) -> ClassLabel {
    if index % 2 == 1 {
        ClassLabel::Malignant
    } else {
        ClassLabel::Benign
    }
}

/// Top-left corners where a fingerprint patch stays clear of the lesion
/// region.
pub(super) fn fingerprint_sites(config: &ToyConfig) -> Vec<(usize, usize)> {
    let n = config.image_size;
    let side = config.fingerprint_size.min(n);
    let region = config.lesion_region.min(n);
    let (r0, r1) = ((n - region) / 2, (n - region) / 2 + region);
    let clear = |a: usize| a + side <= r0 || a >= r1;
    let mut sites = Vec::new();
    for y0 in 0..=n - side {
        for x0 in 0..=n - side {
            if clear(x0) || clear(y0) {
                sites.push((x0, y0));
            }
        }
    }
    sites
}

/// A patient's additive fingerprint: a square patch outside the lesion
/// region holding a shuffled, balanced set of +/- values. Position and
/// pattern are fixed by `(seed, patient)`.
fn fingerprint(config: &ToyConfig, sites: &[(usize, usize)], patient: usize) -> Vec<f64> {
    let n = config.image_size;
    let side = config.fingerprint_size.min(n);
    let mut rng = SplitRng::derive(config.seed, FINGERPRINT_TAG + patient as u64);
    let (x0, y0) = sites[rng.below(sites.len() as u64) as usize];
    let cells = side * side;
    let mut signs: Vec<f64> = (0..cells).map(|i| if i < cells / 2 { -1.0 } else { 1.0 }).collect();
    rng.shuffle(&mut signs);
    let mut field = vec![0.0; n * n];
    for (i, sign) in signs.into_iter().enumerate() {
        let (y, x) = (y0 + i / side, x0 + i % side);
        field[y * n + x] = sign * config.fingerprint_strength;
    }
    field
}

/// Builds the synthetic cohort.
///
/// Every image is `background + fingerprint + lesion + noise`, clamped to
/// `[0, 1]`. Malignant images carry one Gaussian blob of peak
/// `lesion_strength` centered at a random pixel of the central
/// `lesion_region` square (the "organ"); its support (pixels within two
/// standard deviations of the center) is the lesion mask. Each image draws
/// from its own stream, so the cohort does not depend on generation order.
pub fn generate_cohort(config: &ToyConfig) -> Result<Cohort, ToyError> {
    config.validate()?;
    let n = config.image_size;
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| ToyError::ConfigInvalid(e.to_string()))?;
    let sites = fingerprint_sites(config);
    let region = config.lesion_region.min(n);
    let region_start = (n - region) / 2;
    let mut images = Vec::with_capacity(config.n_patients * config.images_per_patient);
    for p in 0..config.n_patients {
        let print = fingerprint(config, &sites, p);
        let label = patient_label(p);
        for k in 0..config.images_per_patient {
            let mut rng = SplitRng::derive(config.seed, IMAGE_TAG + (p * config.images_per_patient + k) as u64);
            let mut pixels: Vec<f64> = print.iter().map(|f| config.background + f).collect();
            let mut lesion_mask = BinaryMask::empty(n, n);
            if label == ClassLabel::Malignant {
                let cx = (region_start + rng.below(region as u64) as usize) as f64 + 0.5;
                let cy = (region_start + rng.below(region as u64) as usize) as f64 + 0.5;
                let two_var = 2.0 * config.lesion_sigma * config.lesion_sigma;
                for y in 0..n {
                    for x in 0..n {
                        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                        let r2 = dx * dx + dy * dy;
                        pixels[y * n + x] += config.lesion_strength * (-r2 / two_var).exp();
                        if r2 <= 2.0 * two_var {
                            lesion_mask.set(x, y, true);
                        }
                    }
                }
            }
            for v in pixels.iter_mut() {
                *v = (*v + noise.sample(rng.as_rng())).clamp(0.0, 1.0);
            }
            images.push(ToyImage {
                record_id: format!("{}_i{k:03}", patient_id(p)),
                patient_id: patient_id(p),
                label,
                pixels,
                lesion_mask,
            });
        }
    }
    Ok(Cohort { image_size: n, images })
}
