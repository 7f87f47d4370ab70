//! Fair vs unfair training on the synthetic fingerprint cohort.
//!
//!     cargo run --release --example toy_experiment

use splitproof::toylab::{sweep, write_results_csv, SweepSummary, ToyMode, ToySetup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = ToySetup::default();
    let rows = sweep(&setup, &ToyMode::ALL, &[0, 1, 2]);
    write_results_csv(std::io::stdout(), &rows)?;
    for row in &rows {
        if let Ok(r) = &row.outcome {
            println!(
                "{:>6} seed {}: test {:.3} challenge {:.3} gap {:+.3} saliency on/off {:.2}",
                row.mode.as_str(),
                row.seed,
                r.test_accuracy,
                r.challenge_accuracy,
                r.gap(),
                r.saliency_ratio()
            );
        }
    }
    let s = SweepSummary::from_rows(&rows);
    println!("unfair gap ok {}, fair gap ok {}", s.unfair_gap_ok(), s.fair_gap_ok());
    Ok(())
}
