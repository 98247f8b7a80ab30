use texfx_core::gradcheck::full_suite;

#[test]
fn analytic_gradients_match_central_differences() {
    let reports = full_suite(25, 3).unwrap();
    assert_eq!(reports.len(), 14);
    for r in &reports {
        println!("{:<22} max rel err {:.3e} ({:?})", r.term, r.max_rel_err(), r.worst);
        assert!(r.max_rel_err() < 1e-3, "{}: {:?}", r.term, r.worst);
    }
}
