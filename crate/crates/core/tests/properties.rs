use proptest::prelude::*;

use splitproof::manifest::{
    augment_plan, fair_split, leakage_audit, unfair_split, Augmentation, ClassLabel, DatasetManifest,
    ImageRecord, SplitPlan,
};

fn manifest(sizes: &[(usize, bool)]) -> DatasetManifest {
    let records = sizes
        .iter()
        .enumerate()
        .flat_map(|(p, &(n, malignant))| {
            let label = if malignant { ClassLabel::Malignant } else { ClassLabel::Benign };
            (0..n).map(move |k| ImageRecord {
                record_id: format!("P{p:03}_{k:02}"),
                patient_id: format!("P{p:03}"),
                scan_id: format!("S{p:03}"),
                slice_index: k,
                label,
                image_path: format!("S{p:03}/{k:02}.png"),
                mask_path: None,
                augmentation: Augmentation::None,
                source_record_id: None,
            })
        })
        .collect();
    DatasetManifest::new(records, "prop").unwrap()
}

fn cohorts() -> impl Strategy<Value = Vec<(usize, bool)>> {
    prop::collection::vec((1usize..8, any::<bool>()), 3..30)
}

proptest! {
    #[test]
    fn fair_split_always_audits_clean(sizes in cohorts(), train in 0.3f64..0.8, seed in any::<u64>()) {
        let m = manifest(&sizes);
        let validation = (1.0 - train) / 2.0;
        let plan = SplitPlan::fractions(train, validation, 1.0 - train - validation);
        let a = fair_split(&m, &plan, seed).unwrap();
        prop_assert!(leakage_audit(&m, &a).unwrap().is_clean);
    }

    #[test]
    fn splits_are_deterministic(sizes in cohorts(), seed in any::<u64>()) {
        let m = manifest(&sizes);
        let plan = SplitPlan::fractions(0.6, 0.2, 0.2);
        prop_assert_eq!(fair_split(&m, &plan, seed).unwrap(), fair_split(&m, &plan, seed).unwrap());
        prop_assert_eq!(unfair_split(&m, &plan, seed).unwrap(), unfair_split(&m, &plan, seed).unwrap());
    }

    #[test]
    fn augmentation_multiplies_by_angle_count(sizes in cohorts(), k in 1usize..6) {
        let m = manifest(&sizes);
        let angles: Vec<f64> = (1..=k).map(|i| i as f64 * 1.5).collect();
        let out = augment_plan(&m, &angles).unwrap();
        prop_assert_eq!(out.len(), m.len() * (1 + k));
    }
}
