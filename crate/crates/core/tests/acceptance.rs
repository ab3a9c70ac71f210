//! Acceptance suite at full scale. Prints one PASS/FAIL line per criterion.
//!
//! Set `TWOPOINT_VERIFY_LEVEL=quick` for a faster, smaller run.

use twopoint_core::verify::{Level, Suite, CRITERIA};

#[test]
fn acceptance_criteria() {
    let level = match std::env::var("TWOPOINT_VERIFY_LEVEL").as_deref() {
        Ok("quick") => Level::Quick,
        _ => Level::Full,
    };
    let mut suite = Suite::new(level, 42);
    let mut results = Vec::new();
    for &(id, _) in CRITERIA.iter() {
        let r = suite.run(id);
        println!("{}", r.line());
        results.push(r);
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("{}/{} criteria passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
