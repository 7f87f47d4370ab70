//! Synthetic cohort where every patient carries an identifying texture,
//! plus a logistic classifier that can memorize it.
//!
//! An image-level (unfair) split lets the classifier score well on the test
//! fold by recognizing patients it already saw in training; on a set of
//! patients it never saw (the challenge set) that advantage disappears.
//! A patient-level (fair) split forces it onto the lesion signal, so test
//! and challenge accuracies agree.

mod cohort;
mod model;

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{
    fair_split, unfair_split, Augmentation, ClassLabel, DatasetManifest, Fold, ImageRecord, ManifestError, SplitPlan,
};
use crate::rng::SplitRng;

pub use cohort::{generate_cohort, patient_id, patient_label, Cohort, ToyImage};
pub use model::{
    accuracy, log_loss, loss_and_gradient, saliency_map, train_classifier, train_with_selection, Samples, ToyModel,
    TrainHyper, TrainedModel,
};

const CHALLENGE_TAG: u64 = 0xc4a1_1e00;
const SPLIT_TAG: u64 = 0x5b11_7000;

/// Minimum test-minus-challenge accuracy for an unfair run to show leakage.
pub const UNFAIR_MIN_GAP: f64 = 0.15;
/// Maximum |test - challenge| for a fair run.
pub const FAIR_MAX_GAP: f64 = 0.05;

const DEFAULTS_JSON: &str = include_str!("../../fixtures/toy_default.json");

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid toy config: {0}")]
    ConfigInvalid(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("class {} has {count} training examples, need 2", if *.class { "malignant" } else { "benign" })]
    TooFewExamples { class: bool, count: usize },
    #[error("{weights} weights for an image of {image} pixels")]
    DimMismatch { weights: usize, image: usize },
    #[error("all saliency contributions are equal")]
    ZeroRange,
    #[error("imaging: {0}")]
    Imaging(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    /// Side length; images are square.
    pub image_size: usize,
    pub n_patients: usize,
    pub images_per_patient: usize,
    /// Patients held out of every split, half of them malignant.
    pub challenge_patients: usize,
    pub fingerprint_size: usize,
    pub fingerprint_strength: f64,
    pub lesion_strength: f64,
    pub lesion_sigma: f64,
    /// Side of the centered square that lesion centers are drawn from.
    pub lesion_region: usize,
    pub noise_sigma: f64,
    pub background: f64,
    pub seed: u64,
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |msg: String| Err(ToyError::ConfigInvalid(msg));
        if self.image_size == 0 || self.images_per_patient == 0 || self.lesion_region == 0 {
            return bad("image_size, images_per_patient and lesion_region must be positive".into());
        }
        if self.n_patients < 6 {
            return bad(format!("n_patients = {}, need at least 6", self.n_patients));
        }
        if self.challenge_patients < 2 {
            return bad(format!("challenge_patients = {}, need at least 2", self.challenge_patients));
        }
        // the pool keeps at least two patients of each class for splitting
        let per_class = self.n_patients / 2;
        if self.challenge_patients.div_ceil(2) + 2 > per_class {
            return bad(format!(
                "{} challenge patients leave too few of {} for splitting",
                self.challenge_patients, self.n_patients
            ));
        }
        for (name, v) in [
            ("fingerprint_strength", self.fingerprint_strength),
            ("lesion_strength", self.lesion_strength),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v}, must be finite and >= 0"));
            }
        }
        if !(self.lesion_sigma.is_finite() && self.lesion_sigma > 0.0) {
            return bad(format!("lesion_sigma = {}, must be positive", self.lesion_sigma));
        }
        if self.lesion_region > self.image_size || self.fingerprint_size > self.image_size {
            return bad("lesion_region and fingerprint_size must fit in the image".into());
        }
        if self.fingerprint_size == 0 || cohort::fingerprint_sites(self).is_empty() {
            return bad(format!(
                "no room for a {0}x{0} fingerprint outside a {1}x{1} lesion region",
                self.fingerprint_size, self.lesion_region
            ));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return bad(format!("background = {}, must be in [0, 1]", self.background));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// The calibrated setup shipped in `fixtures/toy_default.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySetup {
    pub config: ToyConfig,
    pub hyper: TrainHyper,
    pub split: SplitPlan,
}

impl Default for ToySetup {
    fn default() -> Self {
        serde_json::from_str(DEFAULTS_JSON).expect("bundled toy defaults parse")
    }
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToySetup::default().config
    }
}

impl Default for TrainHyper {
    fn default() -> Self {
        ToySetup::default().hyper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyMode {
    Fair,
    Unfair,
}

impl ToyMode {
    pub const ALL: [ToyMode; 2] = [ToyMode::Fair, ToyMode::Unfair];

    pub fn as_str(self) -> &'static str {
        match self {
            ToyMode::Fair => "fair",
            ToyMode::Unfair => "unfair",
        }
    }
}

impl std::fmt::Display for ToyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ToyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fair" => Ok(ToyMode::Fair),
            "unfair" => Ok(ToyMode::Unfair),
            other => Err(format!("unknown mode {other:?} (fair, unfair)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub mode: ToyMode,
    pub test_accuracy: f64,
    pub challenge_accuracy: f64,
    pub mean_saliency_on_lesion: f64,
    pub mean_saliency_off_lesion: f64,
    pub seed: u64,
}

impl ExperimentResult {
    pub fn gap(&self) -> f64 {
        self.test_accuracy - self.challenge_accuracy
    }

    pub fn saliency_ratio(&self) -> f64 {
        self.mean_saliency_on_lesion / self.mean_saliency_off_lesion
    }
}

/// Which patients end up where in one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientPartition {
    pub challenge: BTreeSet<String>,
    /// Patients with at least one image in each fold.
    pub folds: [BTreeSet<String>; 3],
}

/// Challenge patients for a cohort: `challenge_patients / 2` benign and
/// the rest malignant, drawn from a stream derived from the seed.
pub fn challenge_patients(config: &ToyConfig) -> BTreeSet<String> {
    let mut rng = SplitRng::derive(config.seed, CHALLENGE_TAG);
    let malignant_count = config.challenge_patients.div_ceil(2);
    let benign_count = config.challenge_patients - malignant_count;
    let mut chosen = BTreeSet::new();
    for (label, count) in [(ClassLabel::Benign, benign_count), (ClassLabel::Malignant, malignant_count)] {
        let mut ids: Vec<usize> = (0..config.n_patients).filter(|&p| patient_label(p) == label).collect();
        rng.shuffle(&mut ids);
        chosen.extend(ids[..count].iter().map(|&p| patient_id(p)));
    }
    chosen
}

fn pool_manifest(cohort: &Cohort, challenge: &BTreeSet<String>) -> Result<DatasetManifest, ToyError> {
    let records = cohort
        .images
        .iter()
        .filter(|img| !challenge.contains(&img.patient_id))
        .enumerate()
        .map(|(i, img)| ImageRecord {
            record_id: img.record_id.clone(),
            patient_id: img.patient_id.clone(),
            scan_id: img.patient_id.clone(),
            slice_index: i,
            label: img.label,
            image_path: format!("toy/{}.png", img.record_id),
            mask_path: None,
            augmentation: Augmentation::None,
            source_record_id: None,
        })
        .collect();
    Ok(DatasetManifest::new(records, "toylab")?)
}

struct Prepared {
    cohort: Cohort,
    challenge: BTreeSet<String>,
    fold_of: std::collections::BTreeMap<String, Fold>,
}

fn prepare(config: &ToyConfig, mode: ToyMode, plan: &SplitPlan) -> Result<Prepared, ToyError> {
    let cohort = generate_cohort(config)?;
    let challenge = challenge_patients(config);
    let pool = pool_manifest(&cohort, &challenge)?;
    let split_seed = SplitRng::derive(config.seed, SPLIT_TAG).next_u64();
    let fold_of = match mode {
        // one patient-level split per class keeps every fold class-balanced
        ToyMode::Fair => {
            let mut fold_of = std::collections::BTreeMap::new();
            for (k, label) in ClassLabel::ALL.into_iter().enumerate() {
                let records = pool.records.iter().filter(|r| r.label == label).cloned().collect();
                let part = DatasetManifest::new(records, "toylab")?;
                fold_of.extend(fair_split(&part, plan, split_seed.wrapping_add(k as u64))?.fold_of);
            }
            fold_of
        }
        ToyMode::Unfair => unfair_split(&pool, plan, split_seed)?.fold_of,
    };
    Ok(Prepared {
        cohort,
        challenge,
        fold_of,
    })
}

/// Patient sets per fold, for checking that the challenge set stays isolated.
pub fn partition_patients(config: &ToyConfig, mode: ToyMode, plan: &SplitPlan) -> Result<PatientPartition, ToyError> {
    let prep = prepare(config, mode, plan)?;
    let mut folds: [BTreeSet<String>; 3] = Default::default();
    for img in &prep.cohort.images {
        if let Some(fold) = prep.fold_of.get(&img.record_id) {
            folds[fold.index()].insert(img.patient_id.clone());
        }
    }
    Ok(PatientPartition {
        challenge: prep.challenge,
        folds,
    })
}

fn stack<'a>(images: impl Iterator<Item = &'a ToyImage>) -> (Vec<f64>, Vec<bool>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for img in images {
        rows.extend_from_slice(&img.pixels);
        labels.push(img.label == ClassLabel::Malignant);
    }
    (rows, labels)
}

/// One fair or unfair run.
///
/// The pool (everything outside the challenge set) is split per `plan`,
/// patient-level per class in fair mode and image-level in unfair mode.
/// The classifier trains on the train fold and keeps the epoch with the
/// lowest validation loss, so a leaky validation fold rewards memorizing.
/// Saliency statistics are means over malignant challenge images of the
/// per-image mean heat inside and outside the lesion mask; images whose
/// map is constant are skipped, and both means are 0 when all are.
pub fn run_experiment(
    config: &ToyConfig,
    mode: ToyMode,
    plan: &SplitPlan,
    hyper: &TrainHyper,
) -> Result<ExperimentResult, ToyError> {
    let prep = prepare(config, mode, plan)?;
    let dim = prep.cohort.image_size * prep.cohort.image_size;
    let in_fold = |fold: Fold| {
        let fold_of = &prep.fold_of;
        prep.cohort
            .images
            .iter()
            .filter(move |img| fold_of.get(&img.record_id) == Some(&fold))
    };

    let (train_rows, train_labels) = stack(in_fold(Fold::Train));
    let train = Samples { rows: &train_rows, dim, labels: &train_labels };
    let (val_rows, val_labels) = stack(in_fold(Fold::Validation));
    let validation = Samples { rows: &val_rows, dim, labels: &val_labels };
    let model = train_with_selection(&train, &validation, hyper)?.0.model;

    let (test_rows, test_labels) = stack(in_fold(Fold::Test));
    let test = Samples { rows: &test_rows, dim, labels: &test_labels };
    let challenge_images: Vec<&ToyImage> = prep
        .cohort
        .images
        .iter()
        .filter(|img| prep.challenge.contains(&img.patient_id))
        .collect();
    let (ch_rows, ch_labels) = stack(challenge_images.iter().copied());
    let challenge = Samples { rows: &ch_rows, dim, labels: &ch_labels };

    let (mut on_sum, mut off_sum, mut counted) = (0.0, 0.0, 0usize);
    for img in challenge_images.iter().filter(|i| i.label == ClassLabel::Malignant) {
        // a constant map (e.g. the untrained model won selection) has no
        // on/off contrast to report
        let heat = match saliency_map(&model, &img.pixels, prep.cohort.image_size) {
            Ok(heat) => heat,
            Err(ToyError::ZeroRange) => continue,
            Err(e) => return Err(e),
        };
        let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
        for (h, &inside) in heat.data().iter().zip(img.lesion_mask.data()) {
            if inside {
                on += h;
                n_on += 1;
            } else {
                off += h;
                n_off += 1;
            }
        }
        if n_on > 0 && n_off > 0 {
            on_sum += on / n_on as f64;
            off_sum += off / n_off as f64;
            counted += 1;
        }
    }
    let per = counted.max(1) as f64;
    Ok(ExperimentResult {
        mode,
        test_accuracy: accuracy(&model, &test),
        challenge_accuracy: accuracy(&model, &challenge),
        mean_saliency_on_lesion: on_sum / per,
        mean_saliency_off_lesion: off_sum / per,
        seed: config.seed,
    })
}

/// One row of a seed sweep; failed runs keep their error text.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: ToyMode,
    pub seed: u64,
    pub outcome: Result<ExperimentResult, String>,
}

/// Runs every `(mode, seed)` pair in parallel. Rows come back ordered by
/// mode, then seed, whatever the scheduling.
pub fn sweep(setup: &ToySetup, modes: &[ToyMode], seeds: &[u64]) -> Vec<SweepRow> {
    let mut jobs: Vec<(ToyMode, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    jobs.sort();
    jobs.dedup();
    jobs.par_iter()
        .map(|&(mode, seed)| SweepRow {
            mode,
            seed,
            outcome: run_experiment(&setup.config.with_seed(seed), mode, &setup.split, &setup.hyper)
                .map_err(|e| e.to_string()),
        })
        .collect()
}

/// `mode,seed,test_acc,challenge_acc,sal_on,sal_off,error`
pub fn write_results_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mode", "seed", "test_acc", "challenge_acc", "sal_on", "sal_off", "error"])?;
    for row in rows {
        let seed = row.seed.to_string();
        match &row.outcome {
            Ok(r) => w.write_record([
                row.mode.as_str(),
                &seed,
                &r.test_accuracy.to_string(),
                &r.challenge_accuracy.to_string(),
                &r.mean_saliency_on_lesion.to_string(),
                &r.mean_saliency_off_lesion.to_string(),
                "",
            ])?,
            Err(e) => w.write_record([row.mode.as_str(), &seed, "", "", "", "", e])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-seed checks against the acceptance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub seeds: usize,
    pub unfair_gap_passes: usize,
    pub fair_gap_passes: usize,
    pub saliency_ratio_passes: usize,
    pub failed_runs: usize,
    /// Passes needed per check: four in five, rounded up.
    pub required: usize,
}

impl SweepSummary {
    pub fn from_rows(rows: &[SweepRow]) -> Self {
        let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
        let find = |mode: ToyMode, seed: u64| {
            rows.iter()
                .find(|r| r.mode == mode && r.seed == seed)
                .and_then(|r| r.outcome.as_ref().ok())
        };
        let mut summary = SweepSummary {
            seeds: seeds.len(),
            unfair_gap_passes: 0,
            fair_gap_passes: 0,
            saliency_ratio_passes: 0,
            failed_runs: rows.iter().filter(|r| r.outcome.is_err()).count(),
            required: (seeds.len() * 4).div_ceil(5),
        };
        for &seed in &seeds {
            let fair = find(ToyMode::Fair, seed);
            let unfair = find(ToyMode::Unfair, seed);
            if unfair.is_some_and(|u| u.gap() >= UNFAIR_MIN_GAP) {
                summary.unfair_gap_passes += 1;
            }
            if fair.is_some_and(|f| f.gap().abs() <= FAIR_MAX_GAP) {
                summary.fair_gap_passes += 1;
            }
            if let (Some(f), Some(u)) = (fair, unfair) {
                if f.saliency_ratio() > u.saliency_ratio() {
                    summary.saliency_ratio_passes += 1;
                }
            }
        }
        summary
    }

    pub fn unfair_gap_ok(&self) -> bool {
        self.seeds > 0 && self.unfair_gap_passes >= self.required
    }

    pub fn fair_gap_ok(&self) -> bool {
        self.seeds > 0 && self.fair_gap_passes >= self.required
    }

    pub fn saliency_ok(&self) -> bool {
        self.seeds > 0 && self.saliency_ratio_passes >= self.required
    }

    pub fn passes(&self) -> bool {
        self.unfair_gap_ok() && self.fair_gap_ok() && self.saliency_ok()
    }
}
