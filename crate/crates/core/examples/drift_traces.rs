//! Slip-probability traces for every drift kind and regime, written as CSV
//! (`drift_traces.csv`, one column per combination) plus summary statistics.

use std::fmt::Write as _;

use fastslow::drift::{DriftConfig, DriftKind, DriftProcess, Regime};

fn main() -> anyhow::Result<()> {
    let steps = 100_000;
    let kinds = [DriftKind::PeriodicSine, DriftKind::NonPeriodicSine, DriftKind::OrnsteinUhlenbeck];
    let mut columns = Vec::new();
    let mut header = String::from("t");
    for kind in kinds {
        for regime in Regime::ALL {
            let mut p = DriftProcess::new(DriftConfig::slip(kind, regime, 20_000.0, 7))?;
            let values: Vec<f64> = p.trajectory(steps).into_iter().map(|(_, v)| v).collect();
            let mean = values.iter().sum::<f64>() / steps as f64;
            let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
            println!("{kind:?}/{regime:?}: mean {mean:.3} range [{lo:.3}, {hi:.3}]");
            write!(header, ",{kind:?}_{regime:?}")?;
            columns.push(values);
        }
    }
    let mut text = header + "\n";
    for t in (0..steps).step_by(100) {
        write!(text, "{t}")?;
        for c in &columns {
            write!(text, ",{}", c[t])?;
        }
        text.push('\n');
    }
    std::fs::write("drift_traces.csv", text)?;
    println!("wrote drift_traces.csv");
    Ok(())
}
