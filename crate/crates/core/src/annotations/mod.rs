//! Radiologist reads from LIDC-style XML, cross-reader nodule matching and
//! consensus malignancy labels.
//!
//! Typical flow for one scan:
//!
//! ```
//! use splitproof::annotations::{self, ScanIdentity};
//!
//! let xml = br#"<LidcReadMessage>
//!   <readingSession>
//!     <unblindedReadNodule>
//!       <noduleID>N1</noduleID>
//!       <characteristics><malignancy>5</malignancy></characteristics>
//!       <roi>
//!         <imageZposition>-125.0</imageZposition>
//!         <edgeMap><xCoord>10</xCoord><yCoord>10</yCoord></edgeMap>
//!       </roi>
//!     </unblindedReadNodule>
//!   </readingSession>
//! </LidcReadMessage>"#;
//! let sessions = annotations::parse_lidc_xml(xml).unwrap();
//! let scan = ScanIdentity::new("scan-1", "patient-1");
//! let nodules = annotations::group_reads_into_nodules(&scan, &sessions, 5.0).unwrap();
//! assert_eq!(nodules.len(), 1);
//! assert_eq!(nodules[0].consensus_malignancy, Some(5.0));
//! ```

mod grouping;
mod lidc;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grouping::group_reads_into_nodules;
pub use lidc::{parse_lidc_document, parse_lidc_xml, LidcDocument, ReadingSession};

/// Side length of the LIDC pixel grid.
pub const GRID_SIZE: f64 = 512.0;

/// Default cross-reader centroid tolerance, in pixels.
pub const DEFAULT_MATCH_TOLERANCE_PX: f64 = 5.0;

/// Upper consensus score still labeled benign (inclusive).
pub const BENIGN_MAX: f64 = 1.5;
/// Lower consensus score labeled malignant (inclusive).
pub const MALIGNANT_MIN: f64 = 3.5;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("coordinate ({x}, {y}) outside the 512x512 grid")]
    CoordinateOutOfRange { x: f64, y: f64 },
    #[error("no read carries a malignancy score")]
    NoScores,
    #[error("mean malignancy {0} outside [1, 5]")]
    ScoreOutOfRange(f64),
    #[error("no scan slice within tolerance of any contour")]
    NoMatchingSlice,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, AnnotationError>;

/// One closed ROI outline on a single axial slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub z_position: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_ref: Option<String>,
    pub points: Vec<(f64, f64)>,
}

impl Contour {
    /// Vertex mean of the outline.
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.points.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x, ay + y));
        (sx / n, sy / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiologistRead {
    pub reader_index: usize,
    pub nodule_id_raw: String,
    #[serde(default)]
    pub malignancy: Option<u8>,
    pub contours: Vec<Contour>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoduleLabel {
    Benign,
    Excluded,
    Malignant,
}

/// Identifiers attached to every annotation produced from one XML report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanIdentity {
    pub scan_id: String,
    pub patient_id: String,
}

impl ScanIdentity {
    pub fn new(scan_id: impl Into<String>, patient_id: impl Into<String>) -> Self {
        Self {
            scan_id: scan_id.into(),
            patient_id: patient_id.into(),
        }
    }
}

/// Reads from several radiologists matched to one physical nodule.
///
/// `consensus_malignancy` is `None` only when none of the reads carries a
/// score; such annotations are always labeled [`NoduleLabel::Excluded`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoduleAnnotation {
    pub scan_id: String,
    pub patient_id: String,
    pub consensus_malignancy: Option<f64>,
    pub label: NoduleLabel,
    pub reads: Vec<RadiologistRead>,
    pub z_positions: Vec<f64>,
}

impl NoduleAnnotation {
    /// Assembles an annotation, deriving consensus, label and z coverage.
    pub fn from_reads(scan: &ScanIdentity, reads: Vec<RadiologistRead>) -> Self {
        let consensus = consensus_malignancy(&reads).ok();
        let label = match consensus {
            Some(score) => classify_malignancy(score).unwrap_or(NoduleLabel::Excluded),
            None => NoduleLabel::Excluded,
        };
        let mut z_positions: Vec<f64> = reads
            .iter()
            .flat_map(|r| r.contours.iter().map(|c| c.z_position))
            .collect();
        z_positions.sort_by(f64::total_cmp);
        z_positions.dedup();
        Self {
            scan_id: scan.scan_id.clone(),
            patient_id: scan.patient_id.clone(),
            consensus_malignancy: consensus,
            label,
            reads,
            z_positions,
        }
    }

    pub fn scored_reads(&self) -> usize {
        self.reads.iter().filter(|r| r.malignancy.is_some()).count()
    }
}

/// Arithmetic mean of the malignancy scores that are present.
pub fn consensus_malignancy(reads: &[RadiologistRead]) -> Result<f64> {
    let scores: Vec<f64> = reads
        .iter()
        .filter_map(|r| r.malignancy.map(f64::from))
        .collect();
    if scores.is_empty() {
        return Err(AnnotationError::NoScores);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// `<= 1.5` is benign, `>= 3.5` malignant, anything between is excluded.
pub fn classify_malignancy(mean_score: f64) -> Result<NoduleLabel> {
    if !(1.0..=5.0).contains(&mean_score) {
        return Err(AnnotationError::ScoreOutOfRange(mean_score));
    }
    Ok(if mean_score <= BENIGN_MAX {
        NoduleLabel::Benign
    } else if mean_score >= MALIGNANT_MIN {
        NoduleLabel::Malignant
    } else {
        NoduleLabel::Excluded
    })
}

/// Keeps annotations scored by at least `k` radiologists, in order.
pub fn filter_min_readers(annotations: Vec<NoduleAnnotation>, k: usize) -> Result<Vec<NoduleAnnotation>> {
    if k == 0 {
        return Err(AnnotationError::InvalidArgument("k must be at least 1".into()));
    }
    Ok(annotations
        .into_iter()
        .filter(|a| a.scored_reads() >= k)
        .collect())
}

/// Indices of scan slices lying within `z_tolerance_mm` of any contour.
///
/// `scan_z_positions` may be ascending or descending but must be strictly
/// monotonic. The result is ascending and free of duplicates.
pub fn slices_for_nodule(
    annotation: &NoduleAnnotation,
    scan_z_positions: &[f64],
    z_tolerance_mm: f64,
) -> Result<Vec<usize>> {
    if scan_z_positions.is_empty() {
        return Err(AnnotationError::InvalidArgument("scan has no slices".into()));
    }
    if !is_strictly_monotonic(scan_z_positions) {
        return Err(AnnotationError::InvalidArgument(
            "scan z positions are not strictly monotonic".into(),
        ));
    }
    if !(z_tolerance_mm >= 0.0) {
        return Err(AnnotationError::InvalidArgument("negative z tolerance".into()));
    }
    let mut hits: Vec<usize> = scan_z_positions
        .iter()
        .enumerate()
        .filter(|(_, &slice_z)| {
            annotation
                .z_positions
                .iter()
                .any(|&z| (z - slice_z).abs() <= z_tolerance_mm)
        })
        .map(|(i, _)| i)
        .collect();
    hits.dedup();
    if hits.is_empty() {
        return Err(AnnotationError::NoMatchingSlice);
    }
    Ok(hits)
}

/// Half the median spacing between consecutive slices.
pub fn default_z_tolerance(scan_z_positions: &[f64]) -> Option<f64> {
    if scan_z_positions.len() < 2 {
        return None;
    }
    let mut gaps: Vec<f64> = scan_z_positions
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .collect();
    gaps.sort_by(f64::total_cmp);
    let mid = gaps.len() / 2;
    let median = if gaps.len() % 2 == 0 {
        (gaps[mid - 1] + gaps[mid]) / 2.0
    } else {
        gaps[mid]
    };
    Some(median / 2.0)
}

fn is_strictly_monotonic(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] < w[1]) || values.windows(2).all(|w| w[0] > w[1])
}

pub fn write_annotations_jsonl<W: Write>(mut out: W, annotations: &[NoduleAnnotation]) -> std::io::Result<()> {
    for a in annotations {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_annotations_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<NoduleAnnotation>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(reader: usize, score: Option<u8>) -> RadiologistRead {
        RadiologistRead {
            reader_index: reader,
            nodule_id_raw: format!("n{reader}"),
            malignancy: score,
            contours: vec![Contour {
                z_position: -125.0,
                slice_ref: None,
                points: vec![(10.0, 10.0)],
            }],
        }
    }

    #[test]
    fn consensus_examples() {
        let r = |s: &[Option<u8>]| -> Vec<RadiologistRead> {
            s.iter().enumerate().map(|(i, &m)| read(i, m)).collect()
        };
        let mean = consensus_malignancy(&r(&[Some(1), Some(1), Some(2)])).unwrap();
        assert!((mean - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(consensus_malignancy(&r(&[Some(5); 4])).unwrap(), 5.0);
        assert_eq!(consensus_malignancy(&r(&[Some(2), None, Some(4)])).unwrap(), 3.0);
        assert_eq!(consensus_malignancy(&r(&[None, None])), Err(AnnotationError::NoScores));
    }

    #[test]
    fn threshold_boundaries() {
        assert_eq!(classify_malignancy(1.5).unwrap(), NoduleLabel::Benign);
        assert_eq!(classify_malignancy(3.5).unwrap(), NoduleLabel::Malignant);
        assert_eq!(classify_malignancy(2.0).unwrap(), NoduleLabel::Excluded);
        assert_eq!(classify_malignancy(1.0).unwrap(), NoduleLabel::Benign);
        assert_eq!(classify_malignancy(5.0).unwrap(), NoduleLabel::Malignant);
        assert!(matches!(classify_malignancy(0.5), Err(AnnotationError::ScoreOutOfRange(_))));
        assert!(matches!(classify_malignancy(f64::NAN), Err(AnnotationError::ScoreOutOfRange(_))));
    }

    #[test]
    fn min_reader_filter() {
        let scan = ScanIdentity::new("s", "p");
        let four = NoduleAnnotation::from_reads(&scan, (0..4).map(|i| read(i, Some(4))).collect());
        let two = NoduleAnnotation::from_reads(
            &scan,
            vec![read(0, Some(4)), read(1, Some(5)), read(2, None)],
        );
        let kept = filter_min_readers(vec![four.clone(), two.clone()], 3).unwrap();
        assert_eq!(kept, vec![four.clone()]);
        let all = filter_min_readers(vec![four, two], 1).unwrap();
        assert_eq!(all.len(), 2);
        assert!(filter_min_readers(vec![], 0).is_err());
    }

    fn annotation_at(zs: &[f64]) -> NoduleAnnotation {
        let contours = zs
            .iter()
            .map(|&z| Contour { z_position: z, slice_ref: None, points: vec![(1.0, 1.0)] })
            .collect();
        NoduleAnnotation::from_reads(
            &ScanIdentity::new("s", "p"),
            vec![RadiologistRead { reader_index: 0, nodule_id_raw: "a".into(), malignancy: Some(5), contours }],
        )
    }

    #[test]
    fn slice_lookup() {
        let scan: Vec<f64> = (0..10).map(|i| -120.0 - 2.5 * i as f64).collect();
        let exact = annotation_at(&[-125.0]);
        assert_eq!(slices_for_nodule(&exact, &scan, 0.0).unwrap(), vec![2]);
        let near = annotation_at(&[-124.9]);
        assert_eq!(slices_for_nodule(&near, &scan, 0.25).unwrap(), vec![2]);
        assert_eq!(slices_for_nodule(&near, &scan, 0.0), Err(AnnotationError::NoMatchingSlice));
        let span = annotation_at(&[-127.5, -125.0, -122.5]);
        assert_eq!(slices_for_nodule(&span, &scan, 0.1).unwrap(), vec![1, 2, 3]);
        assert!(slices_for_nodule(&exact, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn default_tolerance_is_half_median_spacing() {
        assert_eq!(default_z_tolerance(&[0.0, 2.5, 5.0, 7.5, 12.5]), Some(1.25));
        assert_eq!(default_z_tolerance(&[1.0]), None);
    }

    #[test]
    fn label_monotone_over_grid() {
        let mut prev = NoduleLabel::Benign;
        for i in 0..=400 {
            let s = 1.0 + i as f64 * 0.01;
            let l = classify_malignancy(s).unwrap();
            assert!(l >= prev);
            prev = l;
        }
    }
}
