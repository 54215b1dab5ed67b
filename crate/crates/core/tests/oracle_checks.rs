use devae::oracles::{closed_form_checks, controller_checks, flow_checks, gradient_checks, Check};

fn assert_all(checks: Vec<Check>) {
    for c in &checks {
        println!("{c}");
    }
    assert!(checks.iter().all(|c| c.passed), "{:?}", checks.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect::<Vec<_>>());
}

#[test]
fn flow_is_invertible_with_exact_logdet_and_normalized_density() {
    assert_all(flow_checks().unwrap());
}

#[test]
fn gradients_match_finite_differences() {
    assert_all(gradient_checks().unwrap());
}

#[test]
fn kl_and_schedules_match_closed_forms() {
    assert_all(closed_form_checks().unwrap());
}

#[test]
fn controller_plans_and_isolation() {
    assert_all(controller_checks().unwrap());
}
