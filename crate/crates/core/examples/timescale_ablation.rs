//! Number of consolidation variables: SF agents with K = 0, 3, 6 and 9 on a
//! shortened schedule.

use fastslow::harness::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let root = std::env::temp_dir().join("fastslow").join("ablation");
    for k in [0, 3, 6, 9] {
        let cfg = ExperimentConfig::from_toml_str(&format!(
            "[experiment]\nname = \"k{k}\"\nseeds = [0, 1]\neval_interval = 2000\n\
             [consolidation]\nk = {k}\n[env]\nsteps_per_task = 10000\n"
        ))?;
        harness::run_experiment_in(&cfg, &root.join(format!("k{k}")))?;
    }
    for s in harness::summarize(&root)? {
        let per_seed: Vec<String> = s.seeds.iter().map(|x| format!("{:.3}", x.auc)).collect();
        println!("{:14} mean AUC {:.3}  per seed {per_seed:?}", s.label, s.mean_auc);
    }
    Ok(())
}
