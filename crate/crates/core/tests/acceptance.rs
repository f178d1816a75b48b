//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Tolerances are pinned in `lieflow::verify`.

use std::io::Write;

use lieflow::verify::{run_criterion, CRITERIA, DEFAULT_SEED};

/// Written to the raw stderr handle, which the test harness does not capture,
/// so the lines show up in every run.
fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    for c in CRITERIA.iter() {
        let r = run_criterion(c, DEFAULT_SEED);
        report(&format!("{}  ({:.1}s)", r.line(), r.seconds));
        if !r.pass() {
            failed.push(r.id);
        }
    }
    let passed = CRITERIA.len() - failed.len();
    report(&format!("acceptance: {passed}/{} criteria pass", CRITERIA.len()));
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
