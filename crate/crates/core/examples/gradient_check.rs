//! Finite-difference gradient checks for every layer type and a small
//! end-to-end coherent model.

use gridnet::verify::{gradient_checks, FD_TOLERANCE};

fn main() -> gridnet::Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    println!("tolerance {FD_TOLERANCE:e}, {seeds} seeds per case");
    let results = gradient_checks(seeds)?;
    for r in &results {
        println!("{:4} {:<32} {}", if r.passed { "ok" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().any(|r| !r.passed) {
        std::process::exit(1);
    }
    Ok(())
}
