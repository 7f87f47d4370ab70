//! Scores heat maps against ground-truth nodule masks.
//!
//! Two families of scores: region statistics inside the mask (maximum and
//! mean heat) and whole-image correlations between the heat map and the
//! mask cast to `{0, 1}` (Pearson and Spearman). Correlations run over
//! every pixel of the image, not a crop around the nodule, so small masks
//! yield small coefficients even for well-placed heat.

pub mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cam::HeatMap;
use crate::imaging::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpretError {
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("heat map is {0}x{1} but mask is {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),
    #[error("zero variance: {0}")]
    ZeroVariance(&'static str),
}

pub type Result<T> = std::result::Result<T, InterpretError>;

fn check(heatmap: &HeatMap, mask: &BinaryMask) -> Result<()> {
    if (heatmap.width(), heatmap.height()) != (mask.width(), mask.height()) {
        return Err(InterpretError::DimMismatch(heatmap.width(), heatmap.height(), mask.width(), mask.height()));
    }
    Ok(())
}

fn inside<'a>(heatmap: &'a HeatMap, mask: &'a BinaryMask) -> Result<impl Iterator<Item = f64> + 'a> {
    check(heatmap, mask)?;
    if mask.count() == 0 {
        return Err(InterpretError::EmptyMask);
    }
    Ok(heatmap.data().iter().zip(mask.data()).filter(|(_, &m)| m).map(|(&h, _)| h))
}

/// Highest heat value under the mask.
pub fn nodule_max(heatmap: &HeatMap, mask: &BinaryMask) -> Result<f64> {
    Ok(inside(heatmap, mask)?.fold(f64::NEG_INFINITY, f64::max))
}

/// Mean heat value under the mask.
pub fn nodule_mean(heatmap: &HeatMap, mask: &BinaryMask) -> Result<f64> {
    let (sum, n) = inside(heatmap, mask)?.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    Ok(sum / n as f64)
}

fn correlate(
    heatmap: &HeatMap,
    mask: &BinaryMask,
    f: fn(&[f64], &[f64]) -> Option<f64>,
) -> Result<f64> {
    check(heatmap, mask)?;
    let m = mask.to_reals();
    if m.iter().all(|&v| v == m[0]) {
        return Err(InterpretError::ZeroVariance("mask is all-0 or all-1"));
    }
    f(heatmap.data(), &m).ok_or(InterpretError::ZeroVariance("heat map is constant"))
}

/// Pixelwise Pearson correlation between heat and mask.
pub fn pearson(heatmap: &HeatMap, mask: &BinaryMask) -> Result<f64> {
    correlate(heatmap, mask, stats::pearson)
}

/// Pixelwise Spearman correlation (average ranks for ties).
pub fn spearman(heatmap: &HeatMap, mask: &BinaryMask) -> Result<f64> {
    correlate(heatmap, mask, stats::spearman)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityScores {
    pub nodule_max: f64,
    pub nodule_mean: f64,
    pub pearson: f64,
    pub spearman: f64,
}

pub fn score(heatmap: &HeatMap, mask: &BinaryMask) -> Result<InterpretabilityScores> {
    Ok(InterpretabilityScores {
        nodule_max: nodule_max(heatmap, mask)?,
        nodule_mean: nodule_mean(heatmap, mask)?,
        pearson: pearson(heatmap, mask)?,
        spearman: spearman(heatmap, mask)?,
    })
}

pub struct ScoreItem {
    pub record_id: String,
    pub model_tag: String,
    pub heatmap: HeatMap,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub record_id: String,
    pub model_tag: String,
    pub outcome: std::result::Result<InterpretabilityScores, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreAggregate {
    pub count: usize,
    pub nodule_max: f64,
    pub nodule_mean: f64,
    pub pearson: f64,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretabilityReport {
    pub rows: Vec<ScoreRow>,
    /// Per-model means over successfully scored rows.
    pub aggregates: BTreeMap<String, ScoreAggregate>,
    /// CAM reduction that produced the heat maps, when known.
    pub cam_variant: Option<String>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    cam_variant: Option<&'a str>,
    scored: usize,
    errored: usize,
    aggregates: &'a BTreeMap<String, ScoreAggregate>,
}

impl InterpretabilityReport {
    /// Sorts rows by (record_id, model_tag) and computes the aggregates.
    pub fn from_rows(mut rows: Vec<ScoreRow>, cam_variant: Option<String>) -> Self {
        rows.sort_by(|a, b| (&a.record_id, &a.model_tag).cmp(&(&b.record_id, &b.model_tag)));
        let mut sums: BTreeMap<String, ScoreAggregate> = BTreeMap::new();
        for row in &rows {
            if let Ok(s) = &row.outcome {
                let agg = sums.entry(row.model_tag.clone()).or_insert(ScoreAggregate {
                    count: 0,
                    nodule_max: 0.0,
                    nodule_mean: 0.0,
                    pearson: 0.0,
                    spearman: 0.0,
                });
                agg.count += 1;
                agg.nodule_max += s.nodule_max;
                agg.nodule_mean += s.nodule_mean;
                agg.pearson += s.pearson;
                agg.spearman += s.spearman;
            }
        }
        for agg in sums.values_mut() {
            let n = agg.count as f64;
            agg.nodule_max /= n;
            agg.nodule_mean /= n;
            agg.pearson /= n;
            agg.spearman /= n;
        }
        Self {
            rows,
            aggregates: sums,
            cam_variant,
        }
    }

    pub fn scored(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_ok()).count()
    }

    pub fn errored(&self) -> usize {
        self.rows.len() - self.scored()
    }

    /// `record_id,model_tag,nodule_max,nodule_mean,pearson,spearman,error`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["record_id", "model_tag", "nodule_max", "nodule_mean", "pearson", "spearman", "error"])?;
        for row in &self.rows {
            match &row.outcome {
                Ok(s) => w.write_record([
                    row.record_id.clone(),
                    row.model_tag.clone(),
                    s.nodule_max.to_string(),
                    s.nodule_mean.to_string(),
                    s.pearson.to_string(),
                    s.spearman.to_string(),
                    String::new(),
                ])?,
                Err(reason) => w.write_record([
                    row.record_id.as_str(),
                    row.model_tag.as_str(),
                    "",
                    "",
                    "",
                    "",
                    reason.as_str(),
                ])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&Sidecar {
            cam_variant: self.cam_variant.as_deref(),
            scored: self.scored(),
            errored: self.errored(),
            aggregates: &self.aggregates,
        })
    }
}

/// Scores every item; failures are kept as errored rows and left out of
/// the aggregates.
pub fn score_batch(items: &[ScoreItem]) -> InterpretabilityReport {
    let rows = items
        .par_iter()
        .map(|item| ScoreRow {
            record_id: item.record_id.clone(),
            model_tag: item.model_tag.clone(),
            outcome: score(&item.heatmap, &item.mask).map_err(|e| e.to_string()),
        })
        .collect();
    InterpretabilityReport::from_rows(rows, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat(w: usize, h: usize, data: &[f64]) -> HeatMap {
        HeatMap::new(w, h, data.to_vec()).unwrap()
    }

    fn mask(w: usize, h: usize, bits: &[u8]) -> BinaryMask {
        BinaryMask::new(w, h, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn region_statistics() {
        let h = heat(3, 3, &[0.1, 0.2, 0.3, 0.4, 0.8, 0.0, 0.5, 0.6, 1.0]);
        let m = mask(3, 3, &[0, 1, 0, 0, 1, 0, 0, 0, 0]);
        assert_eq!(nodule_max(&h, &m).unwrap(), 0.8);
        assert!((nodule_mean(&h, &m).unwrap() - 0.5).abs() < 1e-15);
        let all = mask(3, 3, &[1; 9]);
        assert_eq!(nodule_max(&h, &all).unwrap(), 1.0);
        let one = mask(3, 3, &[0, 0, 0, 0, 0, 0, 0, 1, 0]);
        assert_eq!(nodule_mean(&h, &one).unwrap(), 0.6);
        assert_eq!(nodule_max(&h, &mask(3, 3, &[0; 9])), Err(InterpretError::EmptyMask));
        assert!(matches!(nodule_mean(&h, &mask(1, 1, &[1])), Err(InterpretError::DimMismatch(..))));
    }

    #[test]
    fn correlation_extremes() {
        let m = mask(2, 2, &[1, 0, 0, 1]);
        let same = heat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let inverse = heat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((pearson(&same, &m).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&inverse, &m).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&same, &m).unwrap() - 1.0).abs() < 1e-12);
        let flat = heat(2, 2, &[0.3; 4]);
        assert!(matches!(pearson(&flat, &m), Err(InterpretError::ZeroVariance(_))));
        assert!(matches!(spearman(&same, &mask(2, 2, &[1; 4])), Err(InterpretError::ZeroVariance(_))));
    }

    #[test]
    fn small_pearson_fixture() {
        // mean-centred: h' = (.55,-.25,-.15,-.15), m' = (.75,-.25,-.25,-.25)
        // r = .55 / sqrt(.41 * .75)
        let h = heat(2, 2, &[0.9, 0.1, 0.2, 0.2]);
        let m = mask(2, 2, &[1, 0, 0, 0]);
        let expected = 0.55 / (0.41f64 * 0.75).sqrt();
        assert!((pearson(&h, &m).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 0.991_836_598_134_175_4).abs() < 1e-12);
    }

    #[test]
    fn batch_captures_errors() {
        let good = ScoreItem {
            record_id: "b".into(),
            model_tag: "fair".into(),
            heatmap: heat(2, 2, &[0.9, 0.1, 0.2, 0.2]),
            mask: mask(2, 2, &[1, 0, 0, 0]),
        };
        let bad = ScoreItem {
            record_id: "a".into(),
            model_tag: "fair".into(),
            heatmap: heat(2, 2, &[0.9, 0.1, 0.2, 0.2]),
            mask: mask(2, 2, &[0, 0, 0, 0]),
        };
        let report = score_batch(&[good, bad]);
        assert_eq!(report.scored(), 1);
        assert_eq!(report.errored(), 1);
        assert_eq!(report.rows[0].record_id, "a");
        assert_eq!(report.aggregates["fair"].count, 1);
        assert_eq!(report.aggregates["fair"].nodule_max, 0.9);

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "record_id,model_tag,nodule_max,nodule_mean,pearson,spearman,error");
        assert_eq!(lines.next().unwrap(), "a,fair,,,,,mask has no set pixels");
        assert!(lines.next().unwrap().starts_with("b,fair,0.9,0.9,"));
    }

    #[test]
    fn identical_items_aggregate_to_the_row() {
        let items: Vec<ScoreItem> = (0..4)
            .map(|i| ScoreItem {
                record_id: format!("r{i}"),
                model_tag: "unfair".into(),
                heatmap: heat(2, 2, &[0.9, 0.1, 0.2, 0.4]),
                mask: mask(2, 2, &[1, 1, 0, 0]),
            })
            .collect();
        let report = score_batch(&items);
        let row = report.rows[0].outcome.clone().unwrap();
        let agg = report.aggregates["unfair"];
        assert_eq!(agg.count, 4);
        assert!((agg.nodule_max - row.nodule_max).abs() < 1e-15);
        assert!((agg.nodule_mean - row.nodule_mean).abs() < 1e-15);
        assert!((agg.pearson - row.pearson).abs() < 1e-15);
        assert!((agg.spearman - row.spearman).abs() < 1e-15);
    }
}
