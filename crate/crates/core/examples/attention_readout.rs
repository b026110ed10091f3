//! Cross-attention over the slow consolidation variables: the readout starts
//! inert with uniform weights, and the logged probabilities show which
//! timescales the agent leans on as training goes on.

use fastslow::attention::{attend, AttentionHead};
use fastslow::harness::{self, ExperimentConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let n = 4;
    let head = AttentionHead::new(n, &mut ChaCha8Rng::seed_from_u64(0));
    let equal = vec![vec![0.3, -0.1, 0.2, 0.5]; 5];
    let (out, probs, _) = attend(&head, &[0.1, 0.2, 0.3, 0.4], &equal)?;
    println!("equal chain: probabilities {probs:?}, readout {out:?}");

    let cfg = ExperimentConfig::from_toml_str(
        "[experiment]\nname = \"attention\"\nseeds = [0]\neval_interval = 2000\n\
         [agent]\nattention = true\n[consolidation]\nk = 9\n[env]\nsteps_per_task = 10000\n",
    )?;
    let out = harness::run_experiment_in(&cfg, &std::env::temp_dir().join("fastslow").join("attention"))?;
    for (step, p) in &out.runs[0].attention {
        let cells: String = p.iter().map(|x| format!(" {x:.3}")).collect();
        println!("{step:>7}{cells}  (sum {:.6})", p.iter().sum::<f64>());
    }
    Ok(())
}
