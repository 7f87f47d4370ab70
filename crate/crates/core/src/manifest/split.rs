use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ClassLabel, DatasetManifest, ManifestError, Result};
use crate::rng::SplitRng;

const FRACTION_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Validation,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 3] = [Fold::Train, Fold::Validation, Fold::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Validation => "validation",
            Fold::Test => "test",
        }
    }
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    UnfairImageLevel,
    FairPatientLevel,
}

/// Target fold sizes.
///
/// Fractions must be positive and sum to one. `TwoWay` is the explicit
/// form for a split without a validation fold; `Counts` pins the exact
/// number of records of each class in train, validation and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPlan {
    Fractions { train: f64, validation: f64, test: f64 },
    TwoWay { train: f64, test: f64 },
    Counts(BTreeMap<ClassLabel, [usize; 3]>),
}

impl SplitPlan {
    pub fn fractions(train: f64, validation: f64, test: f64) -> Self {
        SplitPlan::Fractions { train, validation, test }
    }

    fn validate(&self) -> Result<()> {
        let check = |parts: &[f64]| -> Result<()> {
            if parts.iter().any(|f| !f.is_finite() || *f <= 0.0) {
                return Err(ManifestError::InvalidFractions(format!(
                    "fractions must be positive, got {parts:?}"
                )));
            }
            let sum: f64 = parts.iter().sum();
            if (sum - 1.0).abs() > FRACTION_SUM_TOLERANCE {
                return Err(ManifestError::InvalidFractions(format!("fractions sum to {sum}, not 1")));
            }
            Ok(())
        };
        match *self {
            SplitPlan::Fractions { train, validation, test } => check(&[train, validation, test]),
            SplitPlan::TwoWay { train, test } => check(&[train, test]),
            SplitPlan::Counts(_) => Ok(()),
        }
    }

    /// Per-fold fractions, validation being zero for two-way plans.
    pub fn as_fractions(&self) -> Option<[f64; 3]> {
        match *self {
            SplitPlan::Fractions { train, validation, test } => Some([train, validation, test]),
            SplitPlan::TwoWay { train, test } => Some([train, 0.0, test]),
            SplitPlan::Counts(_) => None,
        }
    }

    /// Fold sizes for `n` items of one class (or of a whole pool).
    fn quotas(&self, label: Option<ClassLabel>, n: usize) -> Result<[usize; 3]> {
        match self {
            SplitPlan::Counts(counts) => {
                let fixed = match label {
                    Some(l) => counts.get(&l).copied().unwrap_or([0; 3]),
                    None => {
                        let mut total = [0; 3];
                        for c in counts.values() {
                            for i in 0..3 {
                                total[i] += c[i];
                            }
                        }
                        total
                    }
                };
                let sum: usize = fixed.iter().sum();
                if sum != n {
                    let what = label.map_or("all classes".to_string(), |l| l.to_string());
                    return Err(ManifestError::CountMismatch(format!(
                        "{what}: plan sums to {sum} but manifest has {n}"
                    )));
                }
                Ok(fixed)
            }
            _ => Ok(largest_remainder(n, self.as_fractions().expect("fraction plan"))),
        }
    }
}

/// Integer fold sizes summing to `n` with each within one of `fraction * n`.
///
/// Leftover units go to the folds with the largest fractional parts,
/// ties broken toward the earlier fold; folds with zero fraction never
/// receive any.
pub(crate) fn largest_remainder(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut out = [0usize; 3];
    for i in 0..3 {
        out[i] = (exact[i].floor() as usize).min(n);
    }
    let mut assigned: usize = out.iter().sum();
    while assigned > n {
        let i = (0..3).filter(|&i| out[i] > 0).min_by(|&a, &b| {
            (exact[a] - exact[a].floor()).total_cmp(&(exact[b] - exact[b].floor()))
        });
        out[i.expect("some fold non-empty")] -= 1;
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..3).filter(|&i| fractions[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut k = 0;
    while assigned < n {
        out[order[k % order.len()]] += 1;
        assigned += 1;
        k += 1;
    }
    out
}

/// Fold membership for every record of a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub fold_of: BTreeMap<String, Fold>,
    pub seed: u64,
    pub mode: SplitMode,
    pub plan: SplitPlan,
}

impl SplitAssignment {
    pub fn fold(&self, record_id: &str) -> Option<Fold> {
        self.fold_of.get(record_id).copied()
    }

    /// Number of records per fold.
    pub fn fold_sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for f in self.fold_of.values() {
            sizes[f.index()] += 1;
        }
        sizes
    }

    /// Number of records of `label` per fold.
    pub fn class_fold_sizes(&self, manifest: &DatasetManifest, label: ClassLabel) -> [usize; 3] {
        let mut sizes = [0; 3];
        for r in manifest.records.iter().filter(|r| r.label == label) {
            if let Some(f) = self.fold(&r.record_id) {
                sizes[f.index()] += 1;
            }
        }
        sizes
    }

    pub fn sidecar(&self) -> SplitSidecar {
        SplitSidecar {
            seed: self.seed,
            mode: self.mode,
            fractions: self.plan.as_fractions(),
            counts: match &self.plan {
                SplitPlan::Counts(c) => Some(c.clone()),
                _ => None,
            },
        }
    }
}

/// JSON metadata written next to an assignment CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSidecar {
    pub seed: u64,
    pub mode: SplitMode,
    pub fractions: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<BTreeMap<ClassLabel, [usize; 3]>>,
}

impl SplitSidecar {
    pub fn plan(&self) -> Result<SplitPlan> {
        if let Some(c) = &self.counts {
            return Ok(SplitPlan::Counts(c.clone()));
        }
        match self.fractions {
            Some([train, validation, test]) if validation == 0.0 => Ok(SplitPlan::TwoWay { train, test }),
            Some([train, validation, test]) => Ok(SplitPlan::Fractions { train, validation, test }),
            None => Err(ManifestError::InvalidFractions("sidecar has neither fractions nor counts".into())),
        }
    }
}

/// Image-level split: records of each class are shuffled and cut into
/// folds independently, ignoring patient identity.
pub fn unfair_split(manifest: &DatasetManifest, plan: &SplitPlan, seed: u64) -> Result<SplitAssignment> {
    plan.validate()?;
    if manifest.is_empty() {
        return Err(ManifestError::EmptyManifest);
    }
    let mut rng = SplitRng::new(seed);
    let mut fold_of = BTreeMap::new();
    for label in ClassLabel::ALL {
        let mut members: Vec<&str> = manifest
            .records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.record_id.as_str())
            .collect();
        let quotas = plan.quotas(Some(label), members.len())?;
        rng.shuffle(&mut members);
        let mut rest = members.as_slice();
        for fold in Fold::ALL {
            let (head, tail) = rest.split_at(quotas[fold.index()]);
            for id in head {
                fold_of.insert((*id).to_string(), fold);
            }
            rest = tail;
        }
    }
    Ok(SplitAssignment {
        fold_of,
        seed,
        mode: SplitMode::UnfairImageLevel,
        plan: plan.clone(),
    })
}

/// Patient-level split.
///
/// Patients are shuffled, then each in turn goes to the fold with the
/// largest remaining record deficit against its target size (ties to the
/// earlier fold). All records of a patient share one fold.
pub fn fair_split(manifest: &DatasetManifest, plan: &SplitPlan, seed: u64) -> Result<SplitAssignment> {
    plan.validate()?;
    if manifest.is_empty() {
        return Err(ManifestError::EmptyManifest);
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &manifest.records {
        *sizes.entry(r.patient_id.as_str()).or_default() += 1;
    }
    if sizes.len() < 3 {
        return Err(ManifestError::TooFewPatients(sizes.len()));
    }
    let targets = plan.quotas(None, manifest.len())?;

    let mut patients: Vec<&str> = sizes.keys().copied().collect();
    let mut rng = SplitRng::new(seed);
    rng.shuffle(&mut patients);

    let mut filled = [0i64; 3];
    let mut patient_fold: BTreeMap<&str, Fold> = BTreeMap::new();
    for p in patients {
        let fold = Fold::ALL
            .into_iter()
            .filter(|f| targets[f.index()] > 0)
            .max_by(|a, b| {
                let da = targets[a.index()] as i64 - filled[a.index()];
                let db = targets[b.index()] as i64 - filled[b.index()];
                da.cmp(&db).then(b.index().cmp(&a.index()))
            })
            .expect("at least one fold has a positive target");
        filled[fold.index()] += sizes[p] as i64;
        patient_fold.insert(p, fold);
    }

    let fold_of = manifest
        .records
        .iter()
        .map(|r| (r.record_id.clone(), patient_fold[r.patient_id.as_str()]))
        .collect();
    Ok(SplitAssignment {
        fold_of,
        seed,
        mode: SplitMode::FairPatientLevel,
        plan: plan.clone(),
    })
}

/// `record_id,fold` rows, sorted by record id.
pub fn write_assignment_csv<W: Write>(out: W, assignment: &SplitAssignment) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["record_id", "fold"])?;
    for (id, fold) in &assignment.fold_of {
        w.write_record([id.as_str(), fold.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignment_csv<R: Read>(input: R, sidecar: &SplitSidecar) -> Result<SplitAssignment> {
    #[derive(Deserialize)]
    struct Row {
        record_id: String,
        fold: Fold,
    }
    let mut fold_of = BTreeMap::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: Row = row?;
        if fold_of.insert(row.record_id.clone(), row.fold).is_some() {
            return Err(ManifestError::DuplicateRecord(row.record_id));
        }
    }
    Ok(SplitAssignment {
        fold_of,
        seed: sidecar.seed,
        mode: sidecar.mode,
        plan: sidecar.plan()?,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{class_manifest, grid_manifest};
    use super::super::leakage_audit;
    use super::*;

    fn paper_counts() -> SplitPlan {
        SplitPlan::Counts(BTreeMap::from([
            (ClassLabel::Benign, [969, 410, 136]),
            (ClassLabel::Malignant, [2940, 1241, 414]),
        ]))
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(100, [0.7, 0.2, 0.1]), [70, 20, 10]);
        assert_eq!(largest_remainder(10, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]), [4, 3, 3]);
        assert_eq!(largest_remainder(7, [0.5, 0.0, 0.5]), [4, 0, 3]);
        assert_eq!(largest_remainder(0, [0.7, 0.2, 0.1]), [0, 0, 0]);
    }

    #[test]
    fn counts_mode_reproduces_folder_sizes() {
        let m = class_manifest(1515, 4595);
        let a = unfair_split(&m, &paper_counts(), 1).unwrap();
        assert_eq!(a.class_fold_sizes(&m, ClassLabel::Benign), [969, 410, 136]);
        assert_eq!(a.class_fold_sizes(&m, ClassLabel::Malignant), [2940, 1241, 414]);
    }

    #[test]
    fn counts_mode_rejects_wrong_totals() {
        let m = class_manifest(100, 100);
        assert!(matches!(unfair_split(&m, &paper_counts(), 1), Err(ManifestError::CountMismatch(_))));
    }

    #[test]
    fn fraction_validation() {
        let m = grid_manifest(4, 2);
        for plan in [
            SplitPlan::fractions(1.0, 0.0, 0.0),
            SplitPlan::fractions(0.5, 0.3, 0.3),
            SplitPlan::fractions(-0.1, 0.6, 0.5),
            SplitPlan::TwoWay { train: 1.0, test: 0.0 },
        ] {
            assert!(matches!(unfair_split(&m, &plan, 0), Err(ManifestError::InvalidFractions(_))), "{plan:?}");
        }
        let empty = DatasetManifest::new(vec![], "").unwrap();
        assert!(matches!(
            unfair_split(&empty, &SplitPlan::fractions(0.7, 0.2, 0.1), 0),
            Err(ManifestError::EmptyManifest)
        ));
    }

    #[test]
    fn same_seed_same_assignment() {
        let m = grid_manifest(10, 10);
        let plan = SplitPlan::fractions(0.7, 0.2, 0.1);
        assert_eq!(unfair_split(&m, &plan, 9).unwrap(), unfair_split(&m, &plan, 9).unwrap());
        assert_ne!(unfair_split(&m, &plan, 9).unwrap().fold_of, unfair_split(&m, &plan, 10).unwrap().fold_of);
        assert_eq!(fair_split(&m, &plan, 9).unwrap(), fair_split(&m, &plan, 9).unwrap());
    }

    #[test]
    fn fair_exact_division() {
        let m = grid_manifest(10, 10);
        for seed in 0..20 {
            let a = fair_split(&m, &SplitPlan::fractions(0.7, 0.2, 0.1), seed).unwrap();
            assert_eq!(a.fold_sizes(), [70, 20, 10]);
            assert!(leakage_audit(&m, &a).unwrap().is_clean);
        }
    }

    #[test]
    fn fair_needs_three_patients() {
        let m = grid_manifest(2, 5);
        assert!(matches!(
            fair_split(&m, &SplitPlan::fractions(0.7, 0.2, 0.1), 0),
            Err(ManifestError::TooFewPatients(2))
        ));
    }

    #[test]
    fn fair_two_way_leaves_validation_empty() {
        let m = grid_manifest(10, 3);
        let a = fair_split(&m, &SplitPlan::TwoWay { train: 0.8, test: 0.2 }, 4).unwrap();
        assert_eq!(a.fold_sizes(), [24, 0, 6]);
    }

    /// Replays the packing step by step: shuffled order from the same
    /// stream, fold deficits recomputed from scratch at every step.
    fn greedy_oracle(m: &DatasetManifest, targets: [usize; 3], seed: u64) -> [usize; 3] {
        let mut patients: Vec<String> = m.patients().into_iter().collect();
        SplitRng::new(seed).shuffle(&mut patients);
        let size = |p: &str| m.records.iter().filter(|r| r.patient_id == p).count();
        let mut chosen: Vec<(usize, usize)> = Vec::new();
        for p in &patients {
            let filled = |f: usize| chosen.iter().filter(|c| c.0 == f).map(|c| c.1).sum::<usize>() as i64;
            let mut best = 0;
            for f in 1..3 {
                if targets[f] as i64 - filled(f) > targets[best] as i64 - filled(best) {
                    best = f;
                }
            }
            chosen.push((best, size(p)));
        }
        let mut out = [0; 3];
        for (f, n) in chosen {
            out[f] += n;
        }
        out
    }

    #[test]
    fn fair_skewed_patient_matches_oracle() {
        use super::super::testutil::record;
        let mut records = Vec::new();
        for s in 0..50 {
            records.push(record("BIG", s, ClassLabel::Malignant));
        }
        for p in 0..10 {
            for s in 0..5 {
                records.push(record(&format!("S{p:02}"), s, ClassLabel::Benign));
            }
        }
        let m = DatasetManifest::new(records, "skewed").unwrap();
        let plan = SplitPlan::fractions(0.7, 0.2, 0.1);
        for seed in 0..30 {
            let a = fair_split(&m, &plan, seed).unwrap();
            let got = a.fold_sizes();
            assert_eq!(got, greedy_oracle(&m, [70, 20, 10], seed), "seed {seed}");
            assert!(leakage_audit(&m, &a).unwrap().is_clean);
        }
    }

    #[test]
    fn csv_round_trip() {
        let m = grid_manifest(5, 4);
        let a = fair_split(&m, &SplitPlan::fractions(0.6, 0.2, 0.2), 77).unwrap();
        let mut buf = Vec::new();
        write_assignment_csv(&mut buf, &a).unwrap();
        assert!(buf.starts_with(b"record_id,fold\n"));
        let sidecar: SplitSidecar = serde_json::from_str(&serde_json::to_string(&a.sidecar()).unwrap()).unwrap();
        assert_eq!(read_assignment_csv(&buf[..], &sidecar).unwrap(), a);
    }
}
