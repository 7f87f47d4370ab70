use splitproof::manifest::ClassLabel;
use splitproof::toylab::{self, run_experiment, ExperimentResult, Samples, ToyMode, ToySetup};

fn seeds() -> Vec<u64> {
    (100..120).collect()
}

fn runs(setup: &ToySetup, mode: ToyMode) -> Vec<ExperimentResult> {
    seeds()
        .into_iter()
        .map(|s| run_experiment(&setup.config.with_seed(s), mode, &setup.split, &setup.hyper).unwrap())
        .collect()
}

#[test]
fn no_lesion_means_chance_on_challenge() {
    let mut setup = ToySetup::default();
    setup.config.lesion_strength = 0.0;
    let fair = runs(&setup, ToyMode::Fair);
    let mean = fair.iter().map(|r| r.challenge_accuracy).sum::<f64>() / fair.len() as f64;
    assert!((mean - 0.5).abs() <= 0.1, "mean fair challenge accuracy {mean}");
}

#[test]
fn no_fingerprint_means_no_leak_effect() {
    let mut setup = ToySetup::default();
    setup.config.fingerprint_strength = 0.0;
    let fair = runs(&setup, ToyMode::Fair);
    let unfair = runs(&setup, ToyMode::Unfair);
    let diff = fair
        .iter()
        .zip(&unfair)
        .map(|(f, u)| u.challenge_accuracy - f.challenge_accuracy)
        .sum::<f64>()
        / fair.len() as f64;
    assert!(diff.abs() <= 0.05, "mean paired challenge difference {diff}");
}

#[test]
fn default_step_never_increases_training_loss() {
    let setup = ToySetup::default();
    let cohort = toylab::generate_cohort(&setup.config).unwrap();
    let dim = cohort.image_size * cohort.image_size;
    let rows: Vec<f64> = cohort.images.iter().flat_map(|i| i.pixels.iter().copied()).collect();
    let labels: Vec<bool> = cohort.images.iter().map(|i| i.label == ClassLabel::Malignant).collect();
    let data = Samples { rows: &rows, dim, labels: &labels };
    let trained = toylab::train_classifier(&data, &setup.hyper).unwrap();
    for (epoch, pair) in trained.loss_history.windows(2).enumerate() {
        assert!(pair[1] <= pair[0] + 1e-12, "loss rose at epoch {}: {} -> {}", epoch + 1, pair[0], pair[1]);
    }
}
