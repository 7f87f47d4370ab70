//! Image-level dataset manifests, fair and unfair split generators,
//! per-epoch Monte-Carlo cross-validation schedules and leakage audits.

mod audit;
mod mccv;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::annotations::{self, NoduleAnnotation, NoduleLabel};

pub use audit::{leakage_audit, LeakageReport, LeakedPatient};
pub use mccv::{mccv_schedule, MccvEpoch, MccvSchedule};
pub use split::{
    fair_split, read_assignment_csv, unfair_split, write_assignment_csv, Fold, SplitAssignment, SplitMode,
    SplitPlan, SplitSidecar,
};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("image file missing: {0}")]
    MissingImageFile(String),
    #[error("annotation in scan {scan_id} is labeled excluded")]
    ExcludedLabel { scan_id: String },
    #[error("duplicate rotation angle {0}")]
    DuplicateAngle(f64),
    #[error("invalid rotation angle {0}")]
    InvalidAngle(f64),
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("need at least 3 patients, manifest has {0}")]
    TooFewPatients(usize),
    #[error("invalid fractions: {0}")]
    InvalidFractions(String),
    #[error("count plan does not fit the manifest: {0}")]
    CountMismatch(String),
    #[error("validation fraction leaves an empty or total validation set ({validation} of {pool} patients)")]
    FractionDegenerate { validation: usize, pool: usize },
    #[error("record {0} has no fold assignment")]
    UnassignedRecord(String),
    #[error("assignment names record {0} that is not in the manifest")]
    UnknownRecord(String),
    #[error("duplicate record id {0}")]
    DuplicateRecord(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Annotation(#[from] annotations::AnnotationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ManifestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Benign,
    Malignant,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Benign, ClassLabel::Malignant];
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassLabel::Benign => "benign",
            ClassLabel::Malignant => "malignant",
        })
    }
}

/// How an image was derived from its source slice.
///
/// Serialized as `"none"` or `"rot+2"`, `"rot-4"`, `"rot+1.5"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Augmentation {
    #[default]
    None,
    Rotation(f64),
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::None => f.write_str("none"),
            Augmentation::Rotation(d) => write!(f, "rot{}{}", if *d < 0.0 { "-" } else { "+" }, d.abs()),
        }
    }
}

impl FromStr for Augmentation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "none" {
            return Ok(Augmentation::None);
        }
        let angle = s
            .strip_prefix("rot")
            .and_then(|a| a.parse::<f64>().ok())
            .filter(|a| a.is_finite() && *a != 0.0)
            .ok_or_else(|| format!("unrecognized augmentation {s:?}"))?;
        Ok(Augmentation::Rotation(angle))
    }
}

impl Serialize for Augmentation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Augmentation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub record_id: String,
    pub patient_id: String,
    pub scan_id: String,
    pub slice_index: usize,
    pub label: ClassLabel,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default)]
    pub augmentation: Augmentation,
    /// Record this one was rotated from; present on augmented records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_record_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub provenance: String,
    pub class_counts: BTreeMap<ClassLabel, usize>,
}

impl DatasetManifest {
    /// Builds a manifest and computes its class counts.
    pub fn new(records: Vec<ImageRecord>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(ManifestError::DuplicateRecord(r.record_id.clone()));
            }
        }
        let class_counts = count_classes(&records);
        Ok(Self {
            records,
            provenance: provenance.into(),
            class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn patients(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.patient_id.clone()).collect()
    }

    /// Writes the records as JSON Lines.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R, provenance: impl Into<String>) -> Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Self::new(records, provenance)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file), format!("loaded from {}", path.display()))
    }
}

fn count_classes(records: &[ImageRecord]) -> BTreeMap<ClassLabel, usize> {
    let mut counts: BTreeMap<ClassLabel, usize> = ClassLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for r in records {
        *counts.entry(r.label).or_default() += 1;
    }
    counts
}

/// Relative path of slice `index` of `scan_id` under the image root.
pub fn slice_image_path(scan_id: &str, slice_index: usize) -> String {
    format!("{scan_id}/{slice_index:04}.png")
}

/// One record per (nodule, slice) pair, sorted by patient, scan, slice.
///
/// `slice_map` holds the z position of every slice of each scan, in slice
/// order. The z tolerance used to match contours to slices is half the
/// median slice spacing of the scan (exact match for single-slice scans).
/// With `image_root` set, every referenced image must exist under it at
/// [`slice_image_path`]; `None` skips the check.
pub fn build_manifest(
    annotations: &[NoduleAnnotation],
    image_root: Option<&Path>,
    slice_map: &BTreeMap<String, Vec<f64>>,
) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    let mut nodule_counter: BTreeMap<&str, usize> = BTreeMap::new();
    for annotation in annotations {
        let label = match annotation.label {
            NoduleLabel::Benign => ClassLabel::Benign,
            NoduleLabel::Malignant => ClassLabel::Malignant,
            NoduleLabel::Excluded => {
                return Err(ManifestError::ExcludedLabel {
                    scan_id: annotation.scan_id.clone(),
                })
            }
        };
        let nodule_index = {
            let c = nodule_counter.entry(annotation.scan_id.as_str()).or_default();
            *c += 1;
            *c - 1
        };
        let scan_z = slice_map
            .get(&annotation.scan_id)
            .ok_or_else(|| ManifestError::MissingImageFile(format!("{}/ (no slice list)", annotation.scan_id)))?;
        let tolerance = annotations::default_z_tolerance(scan_z).unwrap_or(0.0);
        for slice_index in annotations::slices_for_nodule(annotation, scan_z, tolerance)? {
            let image_path = slice_image_path(&annotation.scan_id, slice_index);
            if image_root.is_some_and(|root| !root.join(&image_path).is_file()) {
                return Err(ManifestError::MissingImageFile(image_path));
            }
            records.push(ImageRecord {
                record_id: format!("{}_n{nodule_index}_s{slice_index:04}", annotation.scan_id),
                patient_id: annotation.patient_id.clone(),
                scan_id: annotation.scan_id.clone(),
                slice_index,
                label,
                image_path,
                mask_path: None,
                augmentation: Augmentation::None,
                source_record_id: None,
            });
        }
    }
    records.sort_by(|a, b| {
        (&a.patient_id, &a.scan_id, a.slice_index, &a.record_id).cmp(&(&b.patient_id, &b.scan_id, b.slice_index, &b.record_id))
    });
    DatasetManifest::new(records, format!("built from {} annotations", annotations.len()))
}

/// Adds one rotated copy of every record per angle.
///
/// Copies keep patient, scan, slice and label; their id is the source id
/// with `_rot+2`-style suffix. Originals come first, in input order,
/// followed by each record's copies in angle order.
pub fn augment_plan(manifest: &DatasetManifest, angles: &[f64]) -> Result<DatasetManifest> {
    if angles.is_empty() {
        return Err(ManifestError::InvalidArgument("no rotation angles".into()));
    }
    for (i, &a) in angles.iter().enumerate() {
        if !a.is_finite() || a == 0.0 || a.abs() >= 360.0 {
            return Err(ManifestError::InvalidAngle(a));
        }
        if angles[..i].contains(&a) {
            return Err(ManifestError::DuplicateAngle(a));
        }
    }
    let mut records = manifest.records.clone();
    records.reserve(manifest.records.len() * angles.len());
    for source in &manifest.records {
        for &angle in angles {
            let aug = Augmentation::Rotation(angle);
            records.push(ImageRecord {
                record_id: format!("{}_{aug}", source.record_id),
                augmentation: aug,
                source_record_id: Some(source.record_id.clone()),
                ..source.clone()
            });
        }
    }
    let angle_list: Vec<String> = angles.iter().map(|a| a.to_string()).collect();
    DatasetManifest::new(
        records,
        format!("{}; rotated by [{}]", manifest.provenance, angle_list.join(", ")),
    )
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::annotations::{Contour, RadiologistRead, ScanIdentity};

    #[test]
    fn augmentation_text_form() {
        assert_eq!(Augmentation::Rotation(2.0).to_string(), "rot+2");
        assert_eq!(Augmentation::Rotation(-4.0).to_string(), "rot-4");
        assert_eq!("rot-2".parse::<Augmentation>().unwrap(), Augmentation::Rotation(-2.0));
        assert_eq!("none".parse::<Augmentation>().unwrap(), Augmentation::None);
        assert!("rot0".parse::<Augmentation>().is_err());
        assert!("flip".parse::<Augmentation>().is_err());
    }

    #[test]
    fn augment_counts_paper_cohort() {
        let m = class_manifest(303, 919);
        let out = augment_plan(&m, &[2.0, -2.0, 4.0, -4.0]).unwrap();
        assert_eq!(out.count(ClassLabel::Benign), 1515);
        assert_eq!(out.count(ClassLabel::Malignant), 4595);
        let copy = &out.records[m.len()];
        assert_eq!(copy.source_record_id.as_deref(), Some(m.records[0].record_id.as_str()));
        assert_eq!(copy.patient_id, m.records[0].patient_id);
    }

    #[test]
    fn augment_small_and_errors() {
        let m = class_manifest(10, 0);
        assert_eq!(augment_plan(&m, &[2.0]).unwrap().len(), 20);
        assert!(matches!(augment_plan(&m, &[2.0, 2.0]), Err(ManifestError::DuplicateAngle(_))));
        assert!(matches!(augment_plan(&m, &[0.0]), Err(ManifestError::InvalidAngle(_))));
        assert!(augment_plan(&m, &[]).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = record("P1", 0, ClassLabel::Benign);
        assert!(matches!(
            DatasetManifest::new(vec![r.clone(), r], "dup"),
            Err(ManifestError::DuplicateRecord(_))
        ));
    }

    fn malignant_annotation(scan: &str, patient: &str, zs: &[f64]) -> NoduleAnnotation {
        let contours = zs
            .iter()
            .map(|&z| Contour { z_position: z, slice_ref: None, points: vec![(5.0, 5.0)] })
            .collect();
        NoduleAnnotation::from_reads(
            &ScanIdentity::new(scan, patient),
            vec![RadiologistRead { reader_index: 0, nodule_id_raw: "n".into(), malignancy: Some(5), contours }],
        )
    }

    #[test]
    fn build_from_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let zs: Vec<f64> = (0..6).map(|i| -100.0 - 2.5 * i as f64).collect();
        for i in 0..6 {
            let p = dir.path().join(slice_image_path("scanA", i));
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, b"png").unwrap();
        }
        let slice_map = BTreeMap::from([("scanA".to_string(), zs)]);
        let ann = malignant_annotation("scanA", "P1", &[-102.5, -105.0, -107.5]);
        let m = build_manifest(&[ann.clone()], Some(dir.path()), &slice_map).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.count(ClassLabel::Malignant), 3);
        assert_eq!(m.count(ClassLabel::Benign), 0);
        assert_eq!(
            m.records.iter().map(|r| r.slice_index).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );

        let empty = build_manifest(&[], Some(dir.path()), &slice_map).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.count(ClassLabel::Malignant), 0);

        std::fs::remove_file(dir.path().join(slice_image_path("scanA", 2))).unwrap();
        assert!(matches!(
            build_manifest(&[ann.clone()], Some(dir.path()), &slice_map),
            Err(ManifestError::MissingImageFile(_))
        ));
        assert_eq!(build_manifest(&[ann.clone()], None, &slice_map).unwrap().len(), 3);

        let mut excluded = ann;
        excluded.label = NoduleLabel::Excluded;
        assert!(matches!(
            build_manifest(&[excluded], Some(dir.path()), &slice_map),
            Err(ManifestError::ExcludedLabel { .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let m = augment_plan(&grid_manifest(3, 2), &[2.0]).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let back = DatasetManifest::read_jsonl(&buf[..], m.provenance.clone()).unwrap();
        assert_eq!(back, m);
        let first: serde_json::Value = serde_json::from_slice(buf.split(|&b| b == b'\n').next().unwrap()).unwrap();
        assert_eq!(first["augmentation"], "none");
        assert_eq!(first["label"], "benign");
    }
}
