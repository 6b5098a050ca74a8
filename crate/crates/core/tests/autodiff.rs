mod common;

use common::gradcheck_cases::{loss_cases, primitive_cases, TOLERANCE};

fn assert_all(cases: Vec<(&'static str, panlab::Result<f64>)>) {
    let mut failed = Vec::new();
    for (name, res) in cases {
        match res {
            Ok(err) if err <= TOLERANCE => {}
            Ok(err) => failed.push(format!("{name}: {err:e}")),
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    assert!(failed.is_empty(), "{failed:?}");
}

#[test]
fn primitives_match_finite_differences() {
    assert_all(primitive_cases());
}

#[test]
fn losses_match_finite_differences() {
    assert_all(loss_cases());
}
