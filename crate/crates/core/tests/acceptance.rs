//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Set `ACCEPTANCE_SEED` to vary the randomized suites and
//! `ACCEPTANCE_ONLY=3,7` to run a subset.

use thermodamage::acceptance::{run_criterion, CRITERIA, DEFAULT_SEED};

fn main() {
    let seed = std::env::var("ACCEPTANCE_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_SEED);
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for &(id, _) in &CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let out = run_criterion(id, seed);
        println!("{out}");
        if !out.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} failed (seed {seed})", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
