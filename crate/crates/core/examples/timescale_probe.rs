//! Plain SGD keeps the ratio between gradient scales as a ratio between step
//! sizes; Adam's per-coordinate normalisation erases it.

use fastslow::optim::{normalize_ratios, timescale_probe, ProbeOptimizer};

fn main() -> anyhow::Result<()> {
    let kappas = [0.125, 0.0625, 0.03125];
    for opt in [ProbeOptimizer::Sgd, ProbeOptimizer::Adam] {
        let steps = timescale_probe(&kappas, opt, 200)?;
        println!("{opt:?}");
        println!("  step sizes  {steps:?}");
        println!("  normalised  {:?}", normalize_ratios(&steps));
    }
    Ok(())
}
