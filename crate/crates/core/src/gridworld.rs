//! Slippery four-rooms gridworld.
//!
//! Four rooms joined by single-cell doorways with a green and a yellow goal.
//! In task 1 the green goal pays +1 and the yellow goal -1; task 2 swaps
//! them. A global schedule runs `exposures x 2` task segments back to back.
//! With probability `slip_p` the chosen action is replaced by one of the three
//! others, and `slip_p` follows a drift process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drift::DriftProcess;
use crate::error::{Error, Result};

pub const CLASSIC_FOUR_ROOMS: &str = "\
#############
#.....#.....#
#.....#..G..#
#...........#
#.....#.....#
#.....#.....#
##.####.....#
#.....###.###
#.....#.....#
#..Y..#.....#
#...........#
#.....#.....#
#############";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i]
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Task1,
    Task2,
}

impl Task {
    pub fn number(self) -> u8 {
        match self {
            Task::Task1 => 1,
            Task::Task2 => 2,
        }
    }

    pub fn swapped(self) -> Task {
        match self {
            Task::Task1 => Task::Task2,
            Task::Task2 => Task::Task1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Goal {
    Green,
    Yellow,
}

/// Reward for reaching `goal` under `task`.
pub fn goal_reward(task: Task, goal: Goal) -> f64 {
    match (task, goal) {
        (Task::Task1, Goal::Green) | (Task::Task2, Goal::Yellow) => 1.0,
        (Task::Task1, Goal::Yellow) | (Task::Task2, Goal::Green) => -1.0,
    }
}

pub type Pos = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    green: Pos,
    yellow: Pos,
    /// Free cells that are not goals, in row-major order.
    starts: Vec<Pos>,
}

impl Layout {
    /// Parses a layout drawn with `#` walls, `.` floor, `G` green goal and
    /// `Y` yellow goal. The border must be wall.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let rows = lines.len();
        let cols = lines.first().map_or(0, |l| l.chars().count());
        if rows < 3 || cols < 3 {
            return Err(Error::Config("layout must be at least 3x3".into()));
        }
        let mut walls = Vec::with_capacity(rows * cols);
        let (mut green, mut yellow) = (None, None);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::Config(format!("layout row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'G' | 'Y' => {
                        walls.push(false);
                        let slot = if ch == 'G' { &mut green } else { &mut yellow };
                        if slot.replace((r, c)).is_some() {
                            return Err(Error::Config(format!("layout has more than one '{ch}'")));
                        }
                    }
                    other => return Err(Error::Config(format!("unexpected layout character {other:?}"))),
                }
                let border = r == 0 || c == 0 || r + 1 == rows || c + 1 == cols;
                if border && !walls[r * cols + c] {
                    return Err(Error::Config(format!("layout border is open at ({r}, {c})")));
                }
            }
        }
        let green = green.ok_or_else(|| Error::Config("layout has no green goal".into()))?;
        let yellow = yellow.ok_or_else(|| Error::Config("layout has no yellow goal".into()))?;
        let starts = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter(|&p| !walls[p.0 * cols + p.1] && p != green && p != yellow)
            .collect();
        Ok(Self {
            rows,
            cols,
            walls,
            green,
            yellow,
            starts,
        })
    }

    pub fn classic() -> Self {
        Self::parse(CLASSIC_FOUR_ROOMS).expect("built-in layout is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls[p.0 * self.cols + p.1]
    }

    pub fn green(&self) -> Pos {
        self.green
    }

    pub fn yellow(&self) -> Pos {
        self.yellow
    }

    pub fn start_cells(&self) -> &[Pos] {
        &self.starts
    }

    pub fn goal_at(&self, p: Pos) -> Option<Goal> {
        if p == self.green {
            Some(Goal::Green)
        } else if p == self.yellow {
            Some(Goal::Yellow)
        } else {
            None
        }
    }

    /// Cell reached by moving from `p`; bumping into a wall leaves `p` unchanged.
    pub fn moved(&self, p: Pos, a: Action) -> Pos {
        let (dr, dc) = a.delta();
        let r = p.0 as i64 + dr;
        let c = p.1 as i64 + dc;
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            return p;
        }
        let q = (r as usize, c as usize);
        if self.is_wall(q) {
            p
        } else {
            q
        }
    }

    /// Breadth-first distances from `from` to every cell (`None` for walls
    /// and unreachable cells).
    pub fn distances_from(&self, from: Pos) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells()];
        let mut queue = std::collections::VecDeque::new();
        dist[from.0 * self.cols + from.1] = Some(0);
        queue.push_back(from);
        while let Some(p) = queue.pop_front() {
            let d = dist[p.0 * self.cols + p.1].unwrap();
            for a in Action::ALL {
                let q = self.moved(p, a);
                let slot = &mut dist[q.0 * self.cols + q.1];
                if slot.is_none() {
                    *slot = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
        dist
    }
}

/// Where in the task/exposure sequence a global step falls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps_per_task: u64,
    pub exposures: u32,
}

impl Schedule {
    pub fn total_steps(&self) -> u64 {
        self.steps_per_task * 2 * self.exposures as u64
    }

    pub fn segment(&self, pos: u64) -> u64 {
        (pos / self.steps_per_task).min(2 * self.exposures as u64 - 1)
    }

    pub fn task(&self, pos: u64) -> Task {
        if self.segment(pos).is_multiple_of(2) {
            Task::Task1
        } else {
            Task::Task2
        }
    }

    /// 1-based exposure index.
    pub fn exposure(&self, pos: u64) -> u32 {
        (self.segment(pos) / 2) as u32 + 1
    }

    /// `[start, end)` steps of segment `index`.
    pub fn segment_bounds(&self, index: u64) -> (u64, u64) {
        (index * self.steps_per_task, (index + 1) * self.steps_per_task)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridWorldState {
    pub pos: Pos,
    pub task: Task,
    pub exposure: u32,
    pub step_in_episode: u32,
    pub slip_p: f64,
    /// Global schedule position (environment steps taken so far).
    pub schedule_pos: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub executed_action: Action,
    pub slip_occurred: bool,
    /// A goal was reached (the episode ends without bootstrapping).
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Debug)]
enum SlipSource {
    Fixed,
    Drift { process: DriftProcess, interval: u64 },
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    layout: Layout,
    schedule: Schedule,
    episode_cap: u32,
    slip: SlipSource,
    slip_p: f64,
    /// Hold the schedule position (evaluation copies).
    frozen: bool,
    rng: ChaCha8Rng,
}

impl GridWorld {
    /// Environment whose slip probability follows `drift`, refreshed every
    /// `interval` steps.
    pub fn with_drift(
        layout: Layout,
        schedule: Schedule,
        episode_cap: u32,
        drift: DriftProcess,
        interval: u64,
        seed: u64,
    ) -> Result<Self> {
        if interval == 0 {
            return Err(Error::Config("slip refresh interval must be positive".into()));
        }
        let cfg = drift.config();
        if cfg.clip_lo < 0.0 || cfg.clip_hi > crate::drift::MAX_SLIP {
            return Err(Error::Config(format!(
                "slip drift must stay within [0, {}], got [{}, {}]",
                crate::drift::MAX_SLIP,
                cfg.clip_lo,
                cfg.clip_hi
            )));
        }
        let slip_p = drift.current();
        Self::build(layout, schedule, episode_cap, SlipSource::Drift { process: drift, interval }, slip_p, seed)
    }

    /// Environment with a constant slip probability.
    pub fn with_fixed_slip(layout: Layout, schedule: Schedule, episode_cap: u32, slip_p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=crate::drift::MAX_SLIP).contains(&slip_p) {
            return Err(Error::Config(format!("slip probability {slip_p} outside [0, 0.45]")));
        }
        Self::build(layout, schedule, episode_cap, SlipSource::Fixed, slip_p, seed)
    }

    fn build(layout: Layout, schedule: Schedule, episode_cap: u32, slip: SlipSource, slip_p: f64, seed: u64) -> Result<Self> {
        if schedule.steps_per_task == 0 || schedule.exposures == 0 {
            return Err(Error::Config("schedule needs positive steps_per_task and exposures".into()));
        }
        if episode_cap == 0 {
            return Err(Error::Config("episode cap must be positive".into()));
        }
        Ok(Self {
            layout,
            schedule,
            episode_cap,
            slip,
            slip_p,
            frozen: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.cells() + 2
    }

    pub fn slip_p(&self) -> f64 {
        self.slip_p
    }

    /// Current drift value (equal to the slip probability for drift-driven
    /// environments).
    pub fn drift_value(&self) -> f64 {
        self.slip_p
    }

    /// A copy for evaluation: slip fixed at its current value, the schedule
    /// position never advances, and its own random stream.
    pub fn frozen_copy(&self, seed: u64) -> GridWorld {
        GridWorld {
            layout: self.layout.clone(),
            schedule: self.schedule,
            episode_cap: self.episode_cap,
            slip: SlipSource::Fixed,
            slip_p: self.slip_p,
            frozen: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn episode_cap(&self) -> u32 {
        self.episode_cap
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Starts an episode at a uniformly random non-goal cell.
    pub fn reset(&mut self, schedule_pos: u64) -> GridWorldState {
        let starts = self.layout.start_cells();
        let pos = starts[self.rng.random_range(0..starts.len())];
        GridWorldState {
            pos,
            task: self.schedule.task(schedule_pos),
            exposure: self.schedule.exposure(schedule_pos),
            step_in_episode: 0,
            slip_p: self.slip_p,
            schedule_pos,
        }
    }

    pub fn step(&mut self, state: &GridWorldState, action: Action) -> (GridWorldState, StepOutcome) {
        let slip_occurred = self.slip_p > 0.0 && self.rng.random::<f64>() < self.slip_p;
        let executed = if slip_occurred {
            let k = self.rng.random_range(0..Action::COUNT - 1);
            let alt = if k >= action.index() { k + 1 } else { k };
            Action::from_index(alt)
        } else {
            action
        };
        let pos = self.layout.moved(state.pos, executed);
        let goal = self.layout.goal_at(pos);
        let reward = goal.map_or(0.0, |g| goal_reward(state.task, g));
        let terminal = goal.is_some();
        let step_in_episode = state.step_in_episode + 1;
        let done = terminal || step_in_episode >= self.episode_cap;

        let schedule_pos = if self.frozen { state.schedule_pos } else { state.schedule_pos + 1 };
        if let SlipSource::Drift { process, interval } = &mut self.slip {
            if schedule_pos % *interval == 0 {
                self.slip_p = process.sample_next();
            }
        }
        let next = GridWorldState {
            pos,
            task: self.schedule.task(schedule_pos),
            exposure: self.schedule.exposure(schedule_pos),
            step_in_episode,
            slip_p: self.slip_p,
            schedule_pos,
        };
        let outcome = StepOutcome {
            next_obs: feature_obs(&self.layout, &next),
            reward,
            done,
            info: StepInfo {
                executed_action: executed,
                slip_occurred,
                terminal,
            },
        };
        (next, outcome)
    }

    pub fn observe(&self, state: &GridWorldState) -> Vec<f64> {
        feature_obs(&self.layout, state)
    }
}

/// One-hot position over every cell of the grid followed by two goal flags
/// that are always zero. The task is not part of the observation.
pub fn feature_obs(layout: &Layout, state: &GridWorldState) -> Vec<f64> {
    let mut obs = vec![0.0; layout.cells() + 2];
    obs[state.pos.0 * layout.cols() + state.pos.1] = 1.0;
    obs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule() -> Schedule {
        Schedule {
            steps_per_task: 100,
            exposures: 2,
        }
    }

    fn fixed(slip: f64, seed: u64) -> GridWorld {
        GridWorld::with_fixed_slip(Layout::classic(), schedule(), 400, slip, seed).unwrap()
    }

    #[test]
    fn classic_layout_shape() {
        let l = Layout::classic();
        assert_eq!((l.rows(), l.cols()), (13, 13));
        assert_eq!(l.start_cells().len(), 104 - 2);
        assert!(!l.is_wall(l.green()));
        assert!(!l.is_wall(l.yellow()));
    }

    #[test]
    fn every_free_cell_reaches_both_goals() {
        let l = Layout::classic();
        let to_green = l.distances_from(l.green());
        let to_yellow = l.distances_from(l.yellow());
        for &p in l.start_cells() {
            let i = p.0 * l.cols() + p.1;
            assert!(to_green[i].is_some() && to_yellow[i].is_some(), "{p:?}");
        }
    }

    #[test]
    fn schedule_lookup() {
        let s = schedule();
        assert_eq!(s.task(0), Task::Task1);
        assert_eq!(s.task(150), Task::Task2);
        assert_eq!(s.exposure(150), 1);
        assert_eq!(s.task(250), Task::Task1);
        assert_eq!(s.exposure(250), 2);
        assert_eq!(s.task(10_000), Task::Task2);
        assert_eq!(s.total_steps(), 400);
    }

    #[test]
    fn reset_is_deterministic_and_uses_schedule() {
        let a = fixed(0.0, 7).reset(150);
        let b = fixed(0.0, 7).reset(150);
        assert_eq!(a, b);
        assert_eq!(a.task, Task::Task2);
        assert!(Layout::classic().goal_at(a.pos).is_none());
    }

    #[test]
    fn no_slip_executes_chosen_action() {
        let mut env = fixed(0.0, 1);
        let mut s = env.reset(0);
        for i in 0..500 {
            let a = Action::from_index(i % 4);
            let (next, out) = env.step(&s, a);
            assert_eq!(out.info.executed_action, a);
            assert!(!out.info.slip_occurred);
            s = if out.done { env.reset(next.schedule_pos) } else { next };
        }
    }

    #[test]
    fn walls_block_movement() {
        let mut env = fixed(0.0, 1);
        let s = GridWorldState {
            pos: (1, 1),
            task: Task::Task1,
            exposure: 1,
            step_in_episode: 0,
            slip_p: 0.0,
            schedule_pos: 0,
        };
        let (next, _) = env.step(&s, Action::Up);
        assert_eq!(next.pos, (1, 1));
    }

    #[test]
    fn task_two_reverses_rewards() {
        let mut env = fixed(0.0, 3);
        let (gr, gc) = env.layout().green();
        let s = GridWorldState {
            pos: (gr + 1, gc),
            task: Task::Task2,
            exposure: 1,
            step_in_episode: 0,
            slip_p: 0.0,
            schedule_pos: 150,
        };
        let (_, out) = env.step(&s, Action::Up);
        assert_eq!(out.reward, -1.0);
        assert!(out.done && out.info.terminal);

        let t1 = GridWorldState { task: Task::Task1, schedule_pos: 0, ..s };
        let (_, out) = env.step(&t1, Action::Up);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn reward_swap_is_an_involution() {
        for task in [Task::Task1, Task::Task2] {
            for goal in [Goal::Green, Goal::Yellow] {
                assert_eq!(goal_reward(task.swapped().swapped(), goal), goal_reward(task, goal));
                assert_eq!(goal_reward(task.swapped(), goal), -goal_reward(task, goal));
            }
        }
    }

    #[test]
    fn episode_cap_ends_episode() {
        let mut env = GridWorld::with_fixed_slip(Layout::classic(), schedule(), 3, 0.0, 0).unwrap();
        let mut s = GridWorldState {
            pos: (1, 1),
            task: Task::Task1,
            exposure: 1,
            step_in_episode: 0,
            slip_p: 0.0,
            schedule_pos: 0,
        };
        for i in 0..3 {
            let (next, out) = env.step(&s, Action::Up);
            assert_eq!(out.done, i == 2);
            assert!(!out.info.terminal);
            s = next;
        }
    }

    #[test]
    fn observation_hides_task() {
        let l = Layout::classic();
        let s1 = GridWorldState {
            pos: (1, 1),
            task: Task::Task1,
            exposure: 1,
            step_in_episode: 0,
            slip_p: 0.0,
            schedule_pos: 0,
        };
        let s2 = GridWorldState { task: Task::Task2, ..s1.clone() };
        let o = feature_obs(&l, &s1);
        assert_eq!(o, feature_obs(&l, &s2));
        assert_eq!(o.len(), 171);
        assert_eq!(o.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn slip_alternatives_exclude_chosen_action() {
        let mut env = fixed(0.45, 11);
        let s = env.reset(0);
        let mut seen = [0usize; 4];
        for _ in 0..4000 {
            let (_, out) = env.step(&s, Action::Left);
            if out.info.slip_occurred {
                assert_ne!(out.info.executed_action, Action::Left);
                seen[out.info.executed_action.index()] += 1;
            }
        }
        assert_eq!(seen[Action::Left.index()], 0);
        assert!(seen.iter().enumerate().all(|(i, &n)| i == Action::Left.index() || n > 300));
    }

    #[test]
    fn bad_layouts_rejected() {
        assert!(Layout::parse("###\n#.#\n###").is_err());
        assert!(Layout::parse("####\n#GY.\n####").is_err());
        assert!(Layout::parse("#####\n#GxY#\n#####").is_err());
    }

    #[test]
    fn frozen_copy_holds_task_and_slip() {
        let drift = DriftProcess::new(crate::drift::DriftConfig::slip(
            crate::drift::DriftKind::PeriodicSine,
            crate::drift::Regime::Severe,
            20.0,
            0,
        ))
        .unwrap();
        let mut env = GridWorld::with_drift(Layout::classic(), schedule(), 400, drift, 1, 0).unwrap();
        let mut s = env.reset(0);
        for _ in 0..7 {
            s = env.step(&s, Action::Up).0;
        }
        let slip = env.slip_p();
        let mut eval = env.frozen_copy(5);
        let mut e = eval.reset(99);
        for _ in 0..50 {
            e = eval.step(&e, Action::Right).0;
            assert_eq!(e.schedule_pos, 99);
            assert_eq!(e.task, Task::Task1);
            assert_eq!(eval.slip_p(), slip);
        }
        assert_eq!(env.slip_p(), slip);
    }
}
