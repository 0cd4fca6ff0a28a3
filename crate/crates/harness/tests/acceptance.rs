//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `RESJOIN_CRITERIA=2,5` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use resjoin_harness::criteria::{self, Outcome};

const SEED: u64 = 0x5eed_2024;

fn criterion(n: u32) -> anyhow::Result<Outcome> {
    match n {
        1 => criteria::c1_uniformity(200_000, SEED),
        2 => criteria::c2_delta_equivalence(100, SEED),
        3 => criteria::c3_size_and_density(100, SEED),
        4 => criteria::c4_lemma(100, SEED),
        5 => criteria::c5_stop_law(100_000, 1000, 10_000, SEED),
        6 => criteria::c6_amortized(SEED),
        7 => criteria::c7_scaling(SEED, 5),
        8 => criteria::c8_grouping(20_000, 100_000, SEED),
        9 => criteria::c9_rswp(100_000, 1000, 10, SEED),
        10 => {
            let work = tempfile::tempdir()?;
            criteria::c10_determinism(Path::new(env!("CARGO_BIN_EXE_resjoin")), work.path())
        }
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    let selected: Vec<u32> = match std::env::var("RESJOIN_CRITERIA") {
        Ok(list) if !list.trim().is_empty() => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        _ => (1..=10).collect(),
    };
    let mut failed = 0;
    for n in selected {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| criterion(n)));
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(Ok(o)) => {
                for d in &o.details {
                    println!("    {d}");
                }
                println!("criterion {n}: {} {} ({secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.summary);
                failed += usize::from(!o.pass);
            }
            Ok(Err(e)) => {
                println!("criterion {n}: FAIL error: {e:#} ({secs:.1}s)");
                failed += 1;
            }
            Err(_) => {
                println!("criterion {n}: FAIL panicked ({secs:.1}s)");
                failed += 1;
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
