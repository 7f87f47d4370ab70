//! Image-level vs patient-level splitting on the same manifest, checked by
//! the leakage audit.
//!
//!     cargo run --example split_and_audit

use splitproof::manifest::{
    augment_plan, fair_split, leakage_audit, unfair_split, Augmentation, ClassLabel, DatasetManifest,
    ImageRecord, SplitPlan,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = (0..20)
        .flat_map(|p| {
            let label = if p % 3 == 0 { ClassLabel::Malignant } else { ClassLabel::Benign };
            (0..6).map(move |k| ImageRecord {
                record_id: format!("P{p:02}_{k}"),
                patient_id: format!("P{p:02}"),
                scan_id: format!("S{p:02}"),
                slice_index: k,
                label,
                image_path: format!("S{p:02}/{k:04}.png"),
                mask_path: None,
                augmentation: Augmentation::None,
                source_record_id: None,
            })
        })
        .collect();
    let manifest = augment_plan(&DatasetManifest::new(records, "example")?, &[2.0, -2.0, 4.0, -4.0])?;
    println!("{} records after augmentation", manifest.len());

    let plan = SplitPlan::fractions(0.7, 0.15, 0.15);
    for (name, assignment) in [
        ("unfair", unfair_split(&manifest, &plan, 7)?),
        ("fair", fair_split(&manifest, &plan, 7)?),
    ] {
        let report = leakage_audit(&manifest, &assignment)?;
        println!(
            "{name:>6}: folds {:?}, leaked patients {}, cross-fold pairs {}, augmented copies split from source {}",
            assignment.fold_sizes(),
            report.leaked_patient_count(),
            report.leaked_record_pairs_count,
            report.augmentation_cross_fold_pairs
        );
    }
    Ok(())
}
