use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentConfig, AgentKind, CbpConfig, EwcConfig, Mechanisms, PLastConfig};
use crate::consolidation::ChainConfig;
use crate::drift::{DriftConfig, DriftKind, Regime};
use crate::error::{Error, Result};
use crate::gridworld::Schedule;

/// A full experiment description, read from TOML. Unknown keys are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub agent: AgentConfig,
    /// Absent (or `k = 0`) means no consolidation chain.
    #[serde(default)]
    pub consolidation: Option<ChainConfig>,
    #[serde(default)]
    pub ewc: Option<EwcConfig>,
    #[serde(default)]
    pub p_last: Option<PLastConfig>,
    #[serde(default)]
    pub cbp: Option<CbpConfig>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub drift: DriftSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Defaults to `runs/<name>`.
    pub out_dir: Option<PathBuf>,
    /// Evaluation period in environment steps.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Random-action probability of the evaluation policy; 0 is fully greedy.
    pub eval_epsilon: f64,
    /// Steps-to-threshold level on the windowed mean evaluation return.
    pub threshold: f64,
    /// Number of trailing evaluation records in the threshold window.
    pub threshold_window: usize,
    /// Stop each seed early (the schedule itself is unchanged).
    pub max_steps: Option<u64>,
    /// Seeds run concurrently.
    pub workers: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: None,
            eval_interval: 1_000,
            eval_episodes: 5,
            eval_epsilon: 0.0,
            threshold: 0.8,
            threshold_window: 5,
            max_steps: None,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub steps_per_task: u64,
    pub exposures: u32,
    pub episode_cap: u32,
    /// Slip probability refresh period in steps.
    pub slip_interval: u64,
    /// Constant slip probability instead of a drift process.
    pub fixed_slip: Option<f64>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            steps_per_task: 50_000,
            exposures: 2,
            episode_cap: 400,
            slip_interval: 1,
            fixed_slip: None,
        }
    }
}

/// Drift of the slip probability. Omitted values come from
/// [`DriftConfig::slip`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub kind: DriftKind,
    pub regime: Regime,
    pub period: f64,
    pub amplitude: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub ou_theta: Option<f64>,
    pub ou_sigma: Option<f64>,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            kind: DriftKind::PeriodicSine,
            regime: Regime::Severe,
            period: 20_000.0,
            amplitude: None,
            noise_sigma: None,
            ou_theta: None,
            ou_sigma: None,
        }
    }
}

impl DriftSection {
    pub fn to_config(&self, seed: u64) -> DriftConfig {
        let mut cfg = DriftConfig::slip(self.kind, self.regime, self.period, seed);
        if let Some(a) = self.amplitude {
            cfg.amplitude = a;
        }
        if let Some(s) = self.noise_sigma {
            cfg.noise_sigma = s;
        }
        if let Some(t) = self.ou_theta {
            cfg.ou_theta = t;
        }
        if let Some(s) = self.ou_sigma {
            cfg.ou_sigma = s;
        }
        cfg
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return bad("experiment.seeds must not be empty".into());
        }
        let mut sorted = e.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != e.seeds.len() {
            return bad("experiment.seeds contains duplicates".into());
        }
        if e.eval_interval == 0 || e.eval_episodes == 0 {
            return bad("experiment.eval_interval and eval_episodes must be positive".into());
        }
        if !(0.0..=1.0).contains(&e.eval_epsilon) {
            return bad("experiment.eval_epsilon must lie in [0, 1]".into());
        }
        if e.threshold_window == 0 {
            return bad("experiment.threshold_window must be positive".into());
        }
        if e.workers == 0 {
            return bad("experiment.workers must be positive".into());
        }
        if e.name.is_empty() || e.name.contains(['/', '\\']) {
            return bad(format!("experiment.name {:?} must be a plain file name", e.name));
        }
        self.agent.validate()?;
        if let Some(c) = &self.consolidation {
            if c.k > 0 {
                c.validate()?;
            }
        }
        if let Some(p) = &self.p_last {
            if !(0.0..=1.0).contains(&p.inject_fraction) {
                return bad("p_last.inject_fraction must lie in [0, 1]".into());
            }
        }
        if let Some(c) = &self.cbp {
            if !(0.0..=1.0).contains(&c.replacement_rate) || !(0.0..1.0).contains(&c.decay) {
                return bad("cbp.replacement_rate must lie in [0, 1] and cbp.decay in [0, 1)".into());
            }
        }
        if let Some(ewc) = &self.ewc {
            if !(ewc.lambda >= 0.0) || ewc.interval == 0 {
                return bad("ewc.lambda must be non-negative and ewc.interval positive".into());
            }
        }
        let env = &self.env;
        if env.steps_per_task == 0 || env.exposures == 0 || env.episode_cap == 0 || env.slip_interval == 0 {
            return bad("env values must be positive".into());
        }
        if let Some(p) = env.fixed_slip {
            if !(0.0..=crate::drift::MAX_SLIP).contains(&p) {
                return bad(format!("env.fixed_slip {p} outside [0, 0.45]"));
            }
        }
        self.drift.to_config(0).validate()?;
        if self.agent.attention && self.consolidation.as_ref().is_none_or(|c| c.k < 2) {
            return bad("agent.attention needs a consolidation chain with k >= 2".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            steps_per_task: self.env.steps_per_task,
            exposures: self.env.exposures,
        }
    }

    /// Steps actually run per seed.
    pub fn run_steps(&self) -> u64 {
        let total = self.schedule().total_steps();
        self.experiment.max_steps.map_or(total, |m| m.min(total))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.experiment
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.experiment.name))
    }

    pub fn mechanisms(&self) -> Mechanisms {
        let total = self.schedule().total_steps();
        Mechanisms {
            chain: self.consolidation.clone().filter(|c| c.k > 0),
            ewc: self.ewc.clone(),
            p_last_step: self
                .p_last
                .as_ref()
                .map(|p| (p.inject_fraction * total as f64).round() as u64),
            cbp: self.cbp.clone(),
        }
    }

    /// Short agent name such as `sf+sc(k=9)` or `dqn+p-last`.
    pub fn label(&self) -> String {
        let mut s = match self.agent.kind {
            AgentKind::Dqn => "dqn".to_string(),
            AgentKind::Sf => "sf".to_string(),
        };
        if let Some(c) = self.consolidation.as_ref().filter(|c| c.k > 0) {
            s.push_str(&format!("+sc(k={})", c.k));
        }
        if self.agent.attention {
            s.push_str("+attention");
        }
        if self.ewc.is_some() {
            s.push_str("+ewc");
        }
        if self.p_last.is_some() {
            s.push_str("+p-last");
        }
        if self.cbp.is_some() {
            s.push_str("+cbp");
        }
        s
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
name = "t"
seeds = [1, 2]
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.schedule().total_steps(), 200_000);
        assert_eq!(cfg.agent.batch_size, 32);
        assert!(cfg.consolidation.is_none());
        assert_eq!(cfg.out_dir(), PathBuf::from("runs/t"));
        assert_eq!(cfg.label(), "sf");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[agent]\nlearning_rate = 0.1\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = format!("{MINIMAL}\n[bogus]\nx = 1\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn empty_seeds_rejected() {
        assert!(ExperimentConfig::from_toml_str("[experiment]\nname = \"t\"\nseeds = []\n").is_err());
    }

    #[test]
    fn mechanisms_and_label() {
        let text = format!(
            "{MINIMAL}\n[agent]\nkind = \"dqn\"\n[consolidation]\nk = 6\n[p_last]\n[drift]\nkind = \"ou\"\nregime = \"mild\"\n"
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.label(), "dqn+sc(k=6)+p-last");
        let m = cfg.mechanisms();
        assert_eq!(m.p_last_step, Some(100_000));
        assert_eq!(m.chain.unwrap().k, 6);
        assert_eq!(cfg.drift.to_config(0).clip_hi, 0.1125);
    }

    #[test]
    fn zero_k_means_no_chain() {
        let text = format!("{MINIMAL}\n[consolidation]\nk = 0\n");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert!(cfg.mechanisms().chain.is_none());
        assert_eq!(cfg.label(), "sf");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let b = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.agent.lr = 5e-4;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn toml_round_trip() {
        let text = format!("{MINIMAL}\n[consolidation]\nk = 3\n[ewc]\nlambda = 0.0\n");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn attention_needs_chain() {
        let text = format!("{MINIMAL}\n[agent]\nattention = true\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
