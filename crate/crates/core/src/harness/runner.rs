use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{act_epsilon_greedy, build_agent, epsilon_at, Agent, ReplayBuffer, Transition};
use crate::drift::DriftProcess;
use crate::error::{Error, Result};
use crate::gridworld::{Action, GridWorld, Layout, Schedule};
use crate::rng::{eval_stream, stream, Stream};

use super::config::ExperimentConfig;

/// Identifies the library build that produced a run directory.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("FASTSLOW_SOURCE_HASH"));

/// One evaluation point of a seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub step: u64,
    pub exposure: u32,
    pub task: u8,
    /// Mean undiscounted return of the greedy evaluation episodes.
    pub episode_return: f64,
    /// Mean return of training episodes finished since the previous record.
    pub train_return: Option<f64>,
    pub drift_value: f64,
    pub slip_p: f64,
}

pub const RECORD_HEADER: &str = "seed,step,exposure,task,episode_return,train_return,drift_value,slip_p";

impl RunRecord {
    fn csv_line(&self, out: &mut String) {
        let train = self.train_return.map(|r| r.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            self.seed, self.step, self.exposure, self.task, self.episode_return, train, self.drift_value, self.slip_p
        )
        .unwrap();
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return None;
        }
        Some(Self {
            seed: f[0].parse().ok()?,
            step: f[1].parse().ok()?,
            exposure: f[2].parse().ok()?,
            task: f[3].parse().ok()?,
            episode_return: f[4].parse().ok()?,
            train_return: if f[5].is_empty() { None } else { Some(f[5].parse().ok()?) },
            drift_value: f[6].parse().ok()?,
            slip_p: f[7].parse().ok()?,
        })
    }
}

/// Everything one seed produced.
#[derive(Clone, Debug, Default)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    /// `(step, steps per second of wall time since the previous record)`.
    pub throughput: Vec<(u64, f64)>,
    /// `(step, attention probabilities over u_2..u_K)`.
    pub attention: Vec<(u64, Vec<f64>)>,
    /// SHA-256 over every step's action, executed action and reward and the
    /// final network parameters. Empty for runs loaded from disk.
    pub digest: String,
}

impl SeedRun {
    pub fn steps(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.step).collect()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.episode_return).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub label: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    /// Per-seed record files, relative to the run directory.
    pub files: Vec<String>,
    pub schedule: Schedule,
    pub run_steps: u64,
    pub eval_interval: u64,
    pub threshold: f64,
    pub threshold_window: usize,
    pub config: ExperimentConfig,
}

pub fn record_file(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

pub fn throughput_file(seed: u64) -> String {
    format!("throughput_seed_{seed}.csv")
}

pub fn attention_file(seed: u64) -> String {
    format!("attention_seed_{seed}.csv")
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Environment for one seed; its slip noise and drift draw from their own
/// streams.
pub fn build_env(cfg: &ExperimentConfig, seed: u64) -> Result<GridWorld> {
    let env_seed: u64 = stream(seed, Stream::Env).random();
    let schedule = cfg.schedule();
    match cfg.env.fixed_slip {
        Some(p) => GridWorld::with_fixed_slip(Layout::classic(), schedule, cfg.env.episode_cap, p, env_seed),
        None => {
            let drift = DriftProcess::new(cfg.drift.to_config(drift_seed(seed)))?;
            GridWorld::with_drift(Layout::classic(), schedule, cfg.env.episode_cap, drift, cfg.env.slip_interval, env_seed)
        }
    }
}

pub fn drift_seed(seed: u64) -> u64 {
    stream(seed, Stream::Drift).random()
}

/// Mean undiscounted (epsilon-)greedy return over `episodes` episodes on a frozen copy
/// of `env` at schedule position `step`.
pub fn evaluate(agent: &dyn Agent, env: &GridWorld, seed: u64, step: u64, episodes: usize, epsilon: f64) -> f64 {
    let mut rng = eval_stream(seed, step);
    let mut copy = env.frozen_copy(rng.random());
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut state = copy.reset(step);
        let mut obs = copy.observe(&state);
        loop {
            let a = act_epsilon_greedy(&agent.q_values(&obs), epsilon, &mut rng);
            let (next, out) = copy.step(&state, Action::from_index(a));
            total += out.reward;
            if out.done {
                break;
            }
            state = next;
            obs = out.next_obs;
        }
    }
    total / episodes as f64
}

/// Trains one seed and returns its records. Deterministic in `(cfg, seed)`
/// apart from the wall-clock throughput.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let mut env = build_env(cfg, seed)?;
    let mut agent = build_agent(&cfg.agent, &cfg.mechanisms(), env.obs_dim(), seed)?;
    let a = &cfg.agent;
    let mut replay = ReplayBuffer::new(a.replay_capacity, a.min_replay);
    let mut explore = stream(seed, Stream::Explore);
    let mut replay_rng = stream(seed, Stream::Replay);
    let decay_steps = (a.epsilon_decay_fraction * cfg.schedule().total_steps() as f64).round() as u64;
    let total = cfg.run_steps();
    let e = &cfg.experiment;

    let mut run = SeedRun {
        seed,
        ..SeedRun::default()
    };
    let mut state = env.reset(0);
    let mut obs: Arc<[f64]> = Arc::from(env.observe(&state));
    let mut episode_return = 0.0;
    let mut finished: Vec<f64> = Vec::new();
    let mut clock = Instant::now();
    let mut clock_step = 0u64;
    let mut digest = Sha256::new();

    let mut record = |run: &mut SeedRun, agent: &mut dyn Agent, env: &GridWorld, step: u64, finished: &mut Vec<f64>| {
        if step > clock_step {
            let secs = clock.elapsed().as_secs_f64().max(1e-9);
            run.throughput.push((step, (step - clock_step) as f64 / secs));
        }
        let schedule = env.schedule();
        let train_return = (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64);
        finished.clear();
        run.records.push(RunRecord {
            seed,
            step,
            exposure: schedule.exposure(step),
            task: schedule.task(step).number(),
            episode_return: evaluate(agent, env, seed, step, e.eval_episodes, e.eval_epsilon),
            train_return,
            drift_value: env.drift_value(),
            slip_p: env.slip_p(),
        });
        if let Some(p) = agent.take_attention() {
            run.attention.push((step, p));
        }
        clock = Instant::now();
        clock_step = step;
    };

    for step in 0..total {
        if step % e.eval_interval == 0 {
            record(&mut run, agent.as_mut(), &env, step, &mut finished);
        }
        agent.on_step(step)?;
        let epsilon = epsilon_at(step, decay_steps, a.epsilon_floor);
        let action = act_epsilon_greedy(&agent.q_values(&obs), epsilon, &mut explore);
        let (next, out) = env.step(&state, Action::from_index(action));
        episode_return += out.reward;
        digest.update([action as u8, out.info.executed_action.index() as u8]);
        digest.update(out.reward.to_le_bytes());
        let next_obs: Arc<[f64]> = Arc::from(out.next_obs);
        replay.push(Transition {
            obs,
            action,
            reward: out.reward,
            next_obs: next_obs.clone(),
            terminal: out.info.terminal,
        });
        if let Some(batch) = replay.sample(a.batch_size, &mut replay_rng) {
            agent.train(&batch, step)?;
        }
        if out.done {
            finished.push(episode_return);
            episode_return = 0.0;
            state = env.reset(step + 1);
            obs = Arc::from(env.observe(&state));
        } else {
            state = next;
            obs = next_obs;
        }
    }
    record(&mut run, agent.as_mut(), &env, total, &mut finished);
    for p in agent.parameters() {
        digest.update(p.to_le_bytes());
    }
    run.digest = digest.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(run)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the record, throughput and (if any) attention CSVs of one seed.
pub fn write_seed(dir: &Path, run: &SeedRun) -> Result<()> {
    let mut text = format!("{RECORD_HEADER}\n");
    run.records.iter().for_each(|r| r.csv_line(&mut text));
    write(&dir.join(record_file(run.seed)), &text)?;

    let mut text = String::from("step,wall_steps_per_sec\n");
    for (step, sps) in &run.throughput {
        writeln!(text, "{step},{sps}").unwrap();
    }
    write(&dir.join(throughput_file(run.seed)), &text)?;

    if let Some((_, first)) = run.attention.first() {
        let mut text = String::from("step");
        for k in 0..first.len() {
            write!(text, ",p_u{}", k + 2).unwrap();
        }
        text.push('\n');
        for (step, probs) in &run.attention {
            write!(text, "{step}").unwrap();
            for p in probs {
                write!(text, ",{p}").unwrap();
            }
            text.push('\n');
        }
        write(&dir.join(attention_file(run.seed)), &text)?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(RECORD_HEADER) {
        return Err(Error::InvalidInput(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            RunRecord::parse(l).ok_or_else(|| Error::InvalidInput(format!("{}: bad record on line {}", path.display(), i + 2)))
        })
        .collect()
}

/// Reads `(step, probabilities)` rows of an attention CSV.
pub fn read_attention(path: &Path) -> Result<Vec<(u64, Vec<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |i: usize| Error::InvalidInput(format!("{}: bad attention row on line {}", path.display(), i + 2));
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, l)| {
            let mut f = l.split(',');
            let step = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(i))?;
            let probs = f.map(|s| s.parse().map_err(|_| bad(i))).collect::<Result<Vec<f64>>>()?;
            Ok((step, probs))
        })
        .collect()
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn manifest_for(cfg: &ExperimentConfig) -> Manifest {
    let e = &cfg.experiment;
    Manifest {
        name: e.name.clone(),
        label: cfg.label(),
        config_hash: cfg.hash(),
        code_version: CODE_VERSION.to_string(),
        seeds: e.seeds.clone(),
        files: e.seeds.iter().map(|&s| record_file(s)).collect(),
        schedule: cfg.schedule(),
        run_steps: cfg.run_steps(),
        eval_interval: e.eval_interval,
        threshold: e.threshold,
        threshold_window: e.threshold_window,
        config: cfg.clone(),
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub runs: Vec<SeedRun>,
}

/// Runs every seed (up to `workers` at a time), writing one CSV per seed and
/// the manifest into `dir`.
pub fn run_experiment_in(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let seeds = &cfg.experiment.seeds;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<SeedRun>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..cfg.experiment.workers.min(seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let out = run_seed(cfg, seeds[i]).and_then(|run| write_seed(dir, &run).map(|_| run));
                let failed = out.is_err();
                results.lock().unwrap().push((i, out));
                if failed {
                    next.store(seeds.len(), Ordering::SeqCst);
                }
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    let runs = results.into_iter().map(|(_, r)| r).collect::<Result<Vec<_>>>()?;

    let manifest = manifest_for(cfg);
    write(&dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(ExperimentOutput {
        dir: dir.to_path_buf(),
        manifest,
        runs,
    })
}

/// [`run_experiment_in`] with the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_experiment_in(cfg, &cfg.out_dir())
}

/// Loads a finished run directory written by the same build for the same
/// config, or `None` if it is missing or stale.
pub fn load_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<Option<ExperimentOutput>> {
    let Ok(manifest) = read_manifest(dir) else {
        return Ok(None);
    };
    if manifest.config_hash != cfg.hash() || manifest.code_version != CODE_VERSION {
        return Ok(None);
    }
    let mut runs = Vec::new();
    for &seed in &manifest.seeds {
        let attention_path = dir.join(attention_file(seed));
        runs.push(SeedRun {
            seed,
            records: read_records(&dir.join(record_file(seed)))?,
            throughput: Vec::new(),
            attention: if attention_path.exists() {
                read_attention(&attention_path)?
            } else {
                Vec::new()
            },
            digest: String::new(),
        });
    }
    Ok(Some(ExperimentOutput {
        dir: dir.to_path_buf(),
        manifest,
        runs,
    }))
}

/// Writes `(t, value)` of the configured drift for the first seed.
pub fn drift_dump(cfg: &ExperimentConfig, steps: usize, path: &Path) -> Result<()> {
    cfg.validate()?;
    let mut process = DriftProcess::new(cfg.drift.to_config(drift_seed(cfg.experiment.seeds[0])))?;
    let mut text = String::from("t,value\n");
    for (t, v) in process.trajectory(steps) {
        writeln!(text, "{t},{v}").unwrap();
    }
    write(path, &text)
}
