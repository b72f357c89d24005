//! Analytic encoder gradients against central finite differences.

use std::time::Instant;

mod common;

use common::{max_relative_error, random_case};

#[test]
fn gradients_match_central_differences_on_random_configurations() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..150 {
        let case = random_case(seed);
        let err = max_relative_error(&case);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    eprintln!("150 configurations, worst relative error {worst:e}, {elapsed:?}");
    assert!(elapsed.as_secs_f64() < 30.0);
}

#[test]
fn gradient_of_pure_wls_sample_matches() {
    // σ = 1 on an unlabeled sample: only the smoothing term remains.
    let mut case = random_case(9_001);
    case.sigma = 1.0;
    for s in &mut case.sups {
        s.unlabeled = true;
        let k = case.encoder.classes();
        s.weights = Some((0..k).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect());
    }
    assert!(max_relative_error(&case) < 1e-4);
}
