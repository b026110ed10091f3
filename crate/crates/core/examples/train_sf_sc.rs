//! Trains successor features with a consolidation chain on a shortened
//! schedule and prints the learning curve and summary metrics. Pass a config
//! path to run something else, e.g. `configs/sf_sc.toml` for the full run.

use fastslow::harness::{self, ExperimentConfig};

const SHORT: &str = r#"
[experiment]
name = "sf_sc_short"
seeds = [0]
eval_interval = 2000
[consolidation]
k = 9
[env]
steps_per_task = 10000
"#;

fn main() -> anyhow::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::from_toml_str(SHORT)?,
    };
    let dir = std::env::temp_dir().join("fastslow").join(&cfg.experiment.name);
    println!("{} for {} steps -> {}", cfg.label(), cfg.run_steps(), dir.display());
    let out = harness::run_experiment_in(&cfg, &dir)?;
    for r in &out.runs[0].records {
        let bar = "#".repeat(((r.episode_return + 1.0) * 20.0).round() as usize);
        println!("{:>7} task {} slip {:.2} return {:+.2} {bar}", r.step, r.task, r.slip_p, r.episode_return);
    }
    for s in harness::summarize(&dir)? {
        println!("mean AUC {:.3}, second-exposure steps to threshold {:?}", s.mean_auc, s.mean_exposure2_steps);
    }
    Ok(())
}
