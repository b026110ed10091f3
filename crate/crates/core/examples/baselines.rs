//! DQN with each continual-learning wrapper (consolidation, online EWC,
//! last-layer plasticity injection, continual backprop) against the
//! successor-feature agent, on a shortened schedule.

use fastslow::harness::{self, ExperimentConfig};

const BASE: &str = r#"
[experiment]
name = "baselines"
seeds = [0]
eval_interval = 2000
[env]
steps_per_task = 10000
"#;

fn main() -> anyhow::Result<()> {
    let variants = [
        ("dqn", "[agent]\nkind = \"dqn\"\n"),
        ("dqn_sc", "[agent]\nkind = \"dqn\"\n[consolidation]\nk = 9\n"),
        ("dqn_ewc", "[agent]\nkind = \"dqn\"\n[ewc]\n"),
        ("dqn_plast", "[agent]\nkind = \"dqn\"\n[p_last]\n"),
        ("dqn_cbp", "[agent]\nkind = \"dqn\"\n[cbp]\n"),
        ("sf_sc", "[consolidation]\nk = 9\n"),
    ];
    let root = std::env::temp_dir().join("fastslow").join("baselines");
    for (name, extra) in variants {
        let mut cfg = ExperimentConfig::from_toml_str(&format!("{BASE}{extra}"))?;
        cfg.experiment.name = name.into();
        harness::run_experiment_in(&cfg, &root.join(name))?;
    }
    for s in harness::summarize(&root)? {
        println!("{:20} AUC {:.3}", s.label, s.mean_auc);
    }
    Ok(())
}
