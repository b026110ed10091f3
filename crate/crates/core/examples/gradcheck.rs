//! Finite-difference check of every network and readout used for training.

use fastslow::gradcheck::{run_all, TOLERANCE};

fn main() -> anyhow::Result<()> {
    for r in run_all(0)? {
        println!("{:32} {:.2e} {}", r.name, r.max_rel_error, if r.passed() { "ok" } else { "FAIL" });
    }
    println!("tolerance {TOLERANCE:e}");
    Ok(())
}
