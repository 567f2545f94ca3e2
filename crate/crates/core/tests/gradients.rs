use geoseg_core::gradcheck::standard_suite;

const TOL: f64 = 1e-4;

#[test]
fn every_op_and_pnet_mini_match_finite_differences() {
    let reports = standard_suite().unwrap();
    assert!(reports.len() >= 20);
    for r in &reports {
        assert!(r.checked > 0, "{}: nothing checked", r.name);
        assert!(
            3 * r.active >= r.checked,
            "{}: only {} of {} gradients are nonzero",
            r.name,
            r.active,
            r.checked
        );
        assert_eq!(
            r.kinks_crossed, 0,
            "{}: finite differences crossed a ReLU kink",
            r.name
        );
        assert!(
            r.worst < TOL,
            "{}: max relative error {:e} at {:?}",
            r.name,
            r.worst,
            r.worst_at
        );
    }
}
