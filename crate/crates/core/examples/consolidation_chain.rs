//! A nine-variable consolidation chain: a pulse written into the plastic
//! variable slowly spreads into the deeper ones, and with the first variable
//! held fixed the chain settles on a decreasing profile.

use fastslow::consolidation::{equilibrium_profile, init_chain, ode_oracle, ChainConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ChainConfig::with_k(9);
    println!("capacities {:?}", (0..cfg.k).map(|i| cfg.capacity(i)).collect::<Vec<_>>());

    let mut state = init_chain(&cfg, &[0.0])?;
    state.vars[0][0] = 1.0;
    println!("\nfree relaxation of a unit pulse in u1");
    println!("{:>6}  {}", "step", (1..=9).map(|k| format!("{:>7}", format!("u{k}"))).collect::<String>());
    for step in 0..=2000u64 {
        if [0, 1, 10, 100, 500, 2000].contains(&step) {
            let row: String = state.vars.iter().map(|v| format!("{:7.4}", v[0])).collect();
            println!("{step:>6}  {row}");
        }
        state.euler_step_in_place(&cfg);
    }

    let mut pulse = init_chain(&cfg, &[0.0])?;
    pulse.vars[0][0] = 1.0;
    let euler = pulse.euler_step(&cfg);
    let exact = ode_oracle(&pulse, &cfg, cfg.dt, 1000)?;
    let err = euler.vars.iter().zip(&exact.vars).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
    println!("\none Euler step vs RK4 reference: max error {err:.2e}");

    let profile = equilibrium_profile(&cfg, 1.0);
    println!("steady state with u1 clamped at 1: {:?}", profile.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    Ok(())
}
