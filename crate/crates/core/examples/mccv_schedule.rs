//! Monte Carlo cross-validation: a fresh patient-level validation draw
//! every epoch around a fixed test set.
//!
//!     cargo run --example mccv_schedule

use std::collections::BTreeSet;

use splitproof::manifest::mccv_schedule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let patients: BTreeSet<String> = (0..15).map(|i| format!("P{i:02}")).collect();
    let test: BTreeSet<String> = ["P03", "P11", "P14"].map(String::from).into();
    let schedule = mccv_schedule(&patients, &test, 0.2, 8, 42)?;
    for (epoch, e) in schedule.epochs.iter().enumerate() {
        println!("epoch {epoch}: validation {:?}", e.validation_patients);
    }
    println!("{} distinct validation sets", schedule.distinct_validation_sets());
    Ok(())
}
