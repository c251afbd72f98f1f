//! Acceptance suite: all twelve criteria at their fixed tolerances, one
//! pass/fail line each. Criterion 12 reruns the first eleven on another
//! thread count without the ball cache and compares every scalar bit for bit.
//!
//! Runs without the libtest harness so the lines always reach stdout.

use cclab_core::lab::acceptance::run_suite;
use cclab_core::lab::BallCache;

const SEED: u64 = 20260101;

fn main() {
    let cache = BallCache::memory();
    let outcomes = run_suite(&[], SEED, Some(&cache), 2, &mut |o| println!("{}", o.line()));
    println!("--");
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| format!("{} {}", o.id, o.name)).collect();
    assert_eq!(outcomes.len(), 12);
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all 12 criteria passed");
}
