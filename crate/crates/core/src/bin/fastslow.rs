use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fastslow::gradcheck;
use fastslow::harness::{self, runner, ExperimentConfig};
use fastslow::optim::{normalize_ratios, timescale_probe, ProbeOptimizer};

#[derive(Parser)]
#[command(version, about = "Successor features with multi-timescale consolidation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config.
    Run {
        config: PathBuf,
        /// Overrides `experiment.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the slip drift trajectory of a config as `t,value` CSV.
    DriftDump {
        config: PathBuf,
        #[arg(long, default_value = "drift.csv")]
        out: PathBuf,
        /// Defaults to the configured run length.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Finite-difference check of every gradient path.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-coordinate step sizes under SGD and Adam for gradients scaled by kappa.
    ProbeTimescales {
        #[arg(long, value_delimiter = ',', default_values_t = [0.125, 0.0625, 0.03125])]
        kappas: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Per-seed AUC and steps-to-threshold of finished runs.
    Summarize { dir: PathBuf },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.out_dir());
            eprintln!(
                "{}: {} seeds x {} steps -> {}",
                cfg.label(),
                cfg.experiment.seeds.len(),
                cfg.run_steps(),
                dir.display()
            );
            let result = harness::run_experiment_in(&cfg, &dir)?;
            for run in &result.runs {
                let auc = harness::auc(&run.steps(), &run.returns())?;
                println!("seed {}: auc {auc:.4}", run.seed);
            }
        }
        Command::DriftDump { config, out, steps } => {
            let cfg = ExperimentConfig::load(&config)?;
            let steps = steps.unwrap_or(cfg.run_steps() as usize);
            runner::drift_dump(&cfg, steps, &out)?;
            println!("wrote {steps} samples to {}", out.display());
        }
        Command::Gradcheck { seed } => {
            let reports = gradcheck::run_all(seed)?;
            let mut failed = 0;
            for r in &reports {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{status:4} {:32} max rel error {:.2e} ({} probes)", r.name, r.max_rel_error, r.probes);
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                bail!("{failed} gradient checks failed");
            }
        }
        Command::ProbeTimescales { kappas, steps } => {
            for opt in [ProbeOptimizer::Sgd, ProbeOptimizer::Adam] {
                let d = timescale_probe(&kappas, opt, steps)?;
                let ratios = normalize_ratios(&d);
                let name = serde_json::to_string(&opt)?;
                println!("{name}: displacements {d:?} ratios {ratios:?}");
            }
        }
        Command::Summarize { dir } => {
            let runs = harness::summarize(&dir).with_context(|| format!("summarizing {}", dir.display()))?;
            for r in &runs {
                let steps = r.mean_exposure2_steps.map_or("-".into(), |s| format!("{s:.0}"));
                println!("{:32} mean auc {:.4}  exposure-2 steps {steps}", r.label, r.mean_auc);
            }
        }
    }
    Ok(())
}
