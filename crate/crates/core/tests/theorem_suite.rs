use ded_core::theorem::{suite_spec, verify_suite_case};

#[test]
fn hundred_random_mdps_pass_every_check() {
    let mut failures = Vec::new();
    let (mut with_dead_ends, mut with_rescues) = (0, 0);
    for i in 0..100 {
        let spec = suite_spec(2024, i);
        assert!(spec.n_states + 2 <= 50 && spec.n_actions <= 5);
        let report = verify_suite_case(2024, i).unwrap();
        with_dead_ends += usize::from(report.dead_ends > 0);
        with_rescues += usize::from(report.rescues > 0);
        if !report.passed() {
            failures.push(format!("case {i}:\n{}", report.to_text()));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
    // the suite must actually exercise both special sets
    assert!(with_dead_ends >= 50, "{with_dead_ends}");
    assert!(with_rescues >= 10, "{with_rescues}");
}

#[test]
fn suite_cases_are_reproducible() {
    for i in [0, 17, 99] {
        assert_eq!(verify_suite_case(7, i).unwrap(), verify_suite_case(7, i).unwrap());
    }
}
