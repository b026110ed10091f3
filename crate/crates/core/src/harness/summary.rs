use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::metrics::{auc, exposure_steps_to_threshold, exposure_total_steps};
use super::runner::{read_manifest, read_records, Manifest, MANIFEST_FILE};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub auc: f64,
    pub mean_return: f64,
    pub final_return: f64,
    /// Summed steps-to-threshold over both tasks of the second exposure,
    /// censored segments counted at their full length. `None` with a single
    /// exposure.
    pub exposure2_steps: Option<u64>,
    /// Whether each second-exposure segment reached the threshold.
    pub exposure2_reached: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub label: String,
    pub dir: PathBuf,
    pub seeds: Vec<SeedSummary>,
    pub mean_auc: f64,
    pub mean_exposure2_steps: Option<f64>,
}

/// Metrics of one seed's evaluation records.
pub fn summarize_seed(manifest: &Manifest, seed: u64, steps: &[u64], returns: &[f64]) -> Result<SeedSummary> {
    let (e2, reached) = if manifest.schedule.exposures >= 2 {
        let segs = exposure_steps_to_threshold(
            &manifest.schedule,
            2,
            steps,
            returns,
            manifest.threshold,
            manifest.threshold_window,
        );
        (Some(exposure_total_steps(&segs)), segs.iter().map(|s| s.reached).collect())
    } else {
        (None, Vec::new())
    };
    Ok(SeedSummary {
        seed,
        auc: auc(steps, returns)?,
        mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
        final_return: *returns.last().unwrap_or(&f64::NAN),
        exposure2_steps: e2,
        exposure2_reached: reached,
    })
}

/// Summarises one run directory (one manifest).
pub fn summarize_run(dir: &Path) -> Result<RunSummary> {
    let manifest = read_manifest(dir)?;
    let mut seeds = Vec::new();
    for (&seed, file) in manifest.seeds.iter().zip(&manifest.files) {
        let records = read_records(&dir.join(file))?;
        let steps: Vec<u64> = records.iter().map(|r| r.step).collect();
        let returns: Vec<f64> = records.iter().map(|r| r.episode_return).collect();
        seeds.push(summarize_seed(&manifest, seed, &steps, &returns)?);
    }
    let n = seeds.len() as f64;
    let mean_auc = seeds.iter().map(|s| s.auc).sum::<f64>() / n;
    let mean_exposure2_steps = seeds
        .iter()
        .map(|s| s.exposure2_steps.map(|v| v as f64))
        .sum::<Option<f64>>()
        .map(|v| v / n);
    Ok(RunSummary {
        name: manifest.name,
        label: manifest.label,
        dir: dir.to_path_buf(),
        seeds,
        mean_auc,
        mean_exposure2_steps,
    })
}

/// Summarises `dir` if it holds a manifest, otherwise every immediate
/// subdirectory that does, and writes `summary.json` into `dir`.
pub fn summarize(dir: &Path) -> Result<Vec<RunSummary>> {
    let runs = if dir.join(MANIFEST_FILE).exists() {
        vec![summarize_run(dir)?]
    } else {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut subdirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).exists())
            .collect();
        subdirs.sort();
        if subdirs.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{}: no {MANIFEST_FILE} here or in any subdirectory",
                dir.display()
            )));
        }
        subdirs.iter().map(|d| summarize_run(d)).collect::<Result<Vec<_>>>()?
    };
    let path = dir.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&runs)?).map_err(|e| Error::io(&path, e))?;
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::harness::runner::{manifest_for, record_file, RECORD_HEADER};

    fn fake_run(dir: &Path, name: &str, value: f64) {
        let cfg = ExperimentConfig::from_toml_str(&format!(
            "[experiment]\nname = \"{name}\"\nseeds = [0, 1]\nthreshold_window = 1\n[env]\nsteps_per_task = 100\n"
        ))
        .unwrap();
        std::fs::create_dir_all(dir).unwrap();
        for seed in [0, 1] {
            let mut text = format!("{RECORD_HEADER}\n");
            for step in (0..=400).step_by(50) {
                text.push_str(&format!("{seed},{step},1,1,{value},,0.1,0.1\n"));
            }
            std::fs::write(dir.join(record_file(seed)), text).unwrap();
        }
        let m = manifest_for(&cfg);
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
    }

    #[test]
    fn constant_runs_summarise() {
        let root = tempfile::tempdir().unwrap();
        fake_run(&root.path().join("a"), "a", 1.0);
        fake_run(&root.path().join("b"), "b", 0.25);
        let runs = summarize(root.path()).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].mean_auc, 1.0);
        assert_eq!(runs[0].mean_exposure2_steps, Some(0.0));
        assert_eq!(runs[1].mean_auc, 0.25);
        // never reaches 0.8: both segments censored at 100 steps
        assert_eq!(runs[1].seeds[0].exposure2_steps, Some(200));
        assert_eq!(runs[1].seeds[0].exposure2_reached, vec![false, false]);
        assert!(root.path().join(SUMMARY_FILE).exists());
    }

    #[test]
    fn missing_manifest_names_the_directory() {
        let root = tempfile::tempdir().unwrap();
        let err = summarize(root.path()).unwrap_err().to_string();
        assert!(err.contains(MANIFEST_FILE), "{err}");
    }
}
