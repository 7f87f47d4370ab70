use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ManifestError, Result};
use crate::rng::SplitRng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MccvEpoch {
    pub train_patients: BTreeSet<String>,
    pub validation_patients: BTreeSet<String>,
}

/// Per-epoch patient-level train/validation partitions around a fixed
/// test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccvSchedule {
    pub epochs: Vec<MccvEpoch>,
    pub test_patients: BTreeSet<String>,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl MccvSchedule {
    pub fn distinct_validation_sets(&self) -> usize {
        self.epochs
            .iter()
            .map(|e| &e.validation_patients)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Draws `epochs` independent train/validation partitions of the non-test
/// patients.
///
/// Each epoch gets `ceil(validation_fraction * n)` validation patients,
/// drawn from its own stream derived from `seed` and the epoch number.
pub fn mccv_schedule(
    patients: &BTreeSet<String>,
    test_patients: &BTreeSet<String>,
    validation_fraction: f64,
    epochs: usize,
    seed: u64,
) -> Result<MccvSchedule> {
    if let Some(stray) = test_patients.difference(patients).next() {
        return Err(ManifestError::InvalidArgument(format!(
            "test patient {stray} is not in the patient set"
        )));
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(ManifestError::InvalidFractions(format!(
            "validation fraction {validation_fraction} outside (0, 1)"
        )));
    }
    if epochs == 0 {
        return Err(ManifestError::InvalidArgument("epochs must be at least 1".into()));
    }
    let pool: Vec<&String> = patients.difference(test_patients).collect();
    let n = pool.len();
    let n_val = (validation_fraction * n as f64).ceil() as usize;
    if n_val == 0 || n_val >= n {
        return Err(ManifestError::FractionDegenerate { validation: n_val, pool: n });
    }

    let epochs = (0..epochs as u64)
        .map(|epoch| {
            let mut order = pool.clone();
            SplitRng::derive(seed, epoch).shuffle(&mut order);
            let (val, train) = order.split_at(n_val);
            MccvEpoch {
                train_patients: train.iter().map(|p| (*p).clone()).collect(),
                validation_patients: val.iter().map(|p| (*p).clone()).collect(),
            }
        })
        .collect();

    Ok(MccvSchedule {
        epochs,
        test_patients: test_patients.clone(),
        validation_fraction,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> BTreeSet<String> {
        (0..n).map(|i| format!("P{i:02}")).collect()
    }

    #[test]
    fn ten_pool_patients_fifth_validation() {
        let all = ids(13);
        let test: BTreeSet<String> = ["P10", "P11", "P12"].iter().map(|s| s.to_string()).collect();
        let s = mccv_schedule(&all, &test, 0.2, 3, 1).unwrap();
        assert_eq!(s.epochs.len(), 3);
        for e in &s.epochs {
            assert_eq!(e.validation_patients.len(), 2);
            assert_eq!(e.train_patients.len(), 8);
            assert!(e.train_patients.is_disjoint(&e.validation_patients));
            assert!(e.train_patients.is_disjoint(&test));
            assert!(e.validation_patients.is_disjoint(&test));
        }
    }

    #[test]
    fn degenerate_fractions() {
        let all = ids(5);
        let none = BTreeSet::new();
        assert!(matches!(
            mccv_schedule(&all, &none, 0.99, 2, 0),
            Err(ManifestError::FractionDegenerate { validation: 5, pool: 5 })
        ));
        assert!(matches!(mccv_schedule(&all, &none, 0.0, 2, 0), Err(ManifestError::InvalidFractions(_))));
        assert!(mccv_schedule(&all, &none, 0.2, 0, 0).is_err());
        let stray: BTreeSet<String> = ["X".to_string()].into();
        assert!(mccv_schedule(&all, &stray, 0.2, 2, 0).is_err());
    }

    #[test]
    fn validation_sets_vary_over_epochs() {
        let s = mccv_schedule(&ids(5), &BTreeSet::new(), 0.2, 50, 123).unwrap();
        assert!(s.distinct_validation_sets() >= 2);
    }

    #[test]
    fn deterministic() {
        let a = mccv_schedule(&ids(20), &ids(3), 0.25, 10, 8).unwrap();
        let b = mccv_schedule(&ids(20), &ids(3), 0.25, 10, 8).unwrap();
        assert_eq!(a, b);
    }
}
