use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Fold, ManifestError, Result, SplitAssignment};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakedPatient {
    pub patient_id: String,
    pub folds: BTreeSet<Fold>,
}

/// Patients whose images reach more than one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub leaked_patients: Vec<LeakedPatient>,
    /// Cross-fold record pairs within leaked patients, summed.
    pub leaked_record_pairs_count: u64,
    /// Rotated copies whose source record sits in another fold. Only
    /// counted for records carrying augmentation provenance.
    pub augmentation_cross_fold_pairs: u64,
    pub is_clean: bool,
}

impl LeakageReport {
    pub fn leaked_patient_count(&self) -> usize {
        self.leaked_patients.len()
    }
}

pub fn leakage_audit(manifest: &DatasetManifest, assignment: &SplitAssignment) -> Result<LeakageReport> {
    let mut per_patient: BTreeMap<&str, [u64; 3]> = BTreeMap::new();
    let mut known = BTreeSet::new();
    for r in &manifest.records {
        let fold = assignment
            .fold(&r.record_id)
            .ok_or_else(|| ManifestError::UnassignedRecord(r.record_id.clone()))?;
        per_patient.entry(r.patient_id.as_str()).or_default()[fold.index()] += 1;
        known.insert(r.record_id.as_str());
    }
    if let Some(extra) = assignment.fold_of.keys().find(|id| !known.contains(id.as_str())) {
        return Err(ManifestError::UnknownRecord(extra.clone()));
    }

    let mut leaked_patients = Vec::new();
    let mut pairs = 0u64;
    for (patient, counts) in per_patient {
        let folds: BTreeSet<Fold> = Fold::ALL.into_iter().filter(|f| counts[f.index()] > 0).collect();
        if folds.len() < 2 {
            continue;
        }
        pairs += counts[0] * counts[1] + counts[0] * counts[2] + counts[1] * counts[2];
        leaked_patients.push(LeakedPatient {
            patient_id: patient.to_string(),
            folds,
        });
    }

    let augmentation_cross_fold_pairs = manifest
        .records
        .iter()
        .filter_map(|r| {
            let source = r.source_record_id.as_deref()?;
            let source_fold = assignment.fold(source)?;
            (assignment.fold(&r.record_id)? != source_fold).then_some(())
        })
        .count() as u64;

    Ok(LeakageReport {
        is_clean: leaked_patients.is_empty(),
        leaked_patients,
        leaked_record_pairs_count: pairs,
        augmentation_cross_fold_pairs,
    })
}
