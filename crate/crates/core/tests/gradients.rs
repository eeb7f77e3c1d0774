use std::time::Instant;

use spa_denoise::gradcheck::{run_suite, Suite, SuiteOptions};

fn assert_suite(suite: Suite) {
    let start = Instant::now();
    let reports = run_suite(suite, 17, SuiteOptions::default()).unwrap();
    for r in &reports {
        println!(
            "{:<40} n={:<5} retried={} max_rel={:.3e} max_abs={:.3e} {}",
            r.group,
            r.checked,
            r.retried,
            r.max_relative,
            r.max_absolute,
            r.worst_failure.as_deref().unwrap_or("ok")
        );
    }
    println!("{suite:?}: {:.2?}", start.elapsed());
    assert!(reports.iter().all(|r| r.passed()));
    assert!(reports.iter().all(|r| r.checked > 0));
}

#[test]
fn layer_gradients() {
    assert_suite(Suite::Layers);
}

#[test]
fn spa_gradients() {
    assert_suite(Suite::Spa);
}

#[test]
fn network_gradients() {
    assert_suite(Suite::Network);
}

#[test]
fn corrupted_backward_is_caught() {
    for suite in [Suite::Layers, Suite::Spa, Suite::Network] {
        let reports = run_suite(suite, 17, SuiteOptions { corrupt: true }).unwrap();
        assert!(reports.iter().any(|r| !r.passed()), "{suite:?}");
    }
}
