use sedcap::gradcheck::{relative_error, run_gradcheck, GradCheckConfig, CHECK_NAMES};

#[test]
fn every_backward_pass_matches_finite_differences() {
    let r = run_gradcheck(&GradCheckConfig::default()).unwrap();
    assert_eq!(r.seeds.len(), 20);
    assert_eq!(r.results.len(), 20 * CHECK_NAMES.len());
    for c in &r.results {
        assert!(c.passed, "{} seed {}: {:.3e} at {}", c.check, c.seed, c.max_rel_error, c.worst);
        assert!(c.coordinates > 0);
    }
    assert!(r.passed && r.max_rel_error < 1e-4);
}

#[test]
fn perturbed_backward_is_caught() {
    let cfg = GradCheckConfig {
        seeds: 2,
        perturb_backward: true,
        ..Default::default()
    };
    let r = run_gradcheck(&cfg).unwrap();
    assert!(!r.passed);
    for (name, err, passed) in r.summary() {
        assert!(!passed && err > 1e-3, "{name} slipped through: {err:.3e}");
    }
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    // Both near zero: compared against the floor, not each other.
    assert!(relative_error(1e-12, -1e-12) < 1e-5);
}

#[test]
fn bad_config_rejected() {
    assert!(run_gradcheck(&GradCheckConfig { seeds: 0, ..Default::default() }).is_err());
    assert!(run_gradcheck(&GradCheckConfig { step: 0.0, ..Default::default() }).is_err());
}
