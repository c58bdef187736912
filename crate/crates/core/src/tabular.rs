//! Tabular Q-learning with epsilon-greedy exploration and optional
//! demonstration warm start.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demos::{warm_start_q, DemoSet, Trajectory};
use crate::env::Environment;
use crate::env_grid::{grid_step, GridAction, GridSpec, GridState};
use crate::error::{Error, Result};

/// Dense `n_states x n_actions` action-value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        assert!(n_states > 0 && n_actions > 0, "empty Q-table");
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || values.len() != n_states * n_actions {
            return Err(Error::Config(format!(
                "{} values do not form a {n_states}x{n_actions} table",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("Q-table has non-finite entries".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    #[inline]
    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * self.n_actions + action] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn max_value(&self, state: usize) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// All actions attaining the row maximum exactly.
    pub fn greedy_actions(&self, state: usize) -> Vec<usize> {
        self.near_greedy_actions(state, 0.0)
    }

    /// Actions within `tol` of the row maximum.
    pub fn near_greedy_actions(&self, state: usize, tol: f64) -> Vec<usize> {
        let best = self.max_value(state);
        self.row(state)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= best - tol)
            .map(|(a, _)| a)
            .collect()
    }

    pub fn nonzero_entries(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// CSV snapshot: a `n_states,n_actions,env_id` header line followed by one
    /// row of action values per state.
    pub fn to_csv(&self, env_id: &str) -> String {
        let mut out = format!("n_states,n_actions,env_id\n{},{},{env_id}\n", self.n_states, self.n_actions);
        for state in 0..self.n_states {
            let row: Vec<String> = self.row(state).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<(Self, String)> {
        let bad = |msg: String| Error::Config(format!("Q-table snapshot: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("n_states,n_actions,env_id") {
            return Err(bad("missing header".into()));
        }
        let meta = lines.next().ok_or_else(|| bad("missing shape line".into()))?;
        let parts: Vec<&str> = meta.splitn(3, ',').collect();
        let [n_states, n_actions, env_id] = parts[..] else {
            return Err(bad("malformed shape line".into()));
        };
        let n_states: usize = n_states.parse().map_err(|_| bad("bad n_states".into()))?;
        let n_actions: usize = n_actions.parse().map_err(|_| bad("bad n_actions".into()))?;
        let mut values = Vec::with_capacity(n_states * n_actions);
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("unparsable row {i}")))?;
            if row.len() != n_actions {
                return Err(bad(format!("row {i} has {} values", row.len())));
            }
            values.extend(row);
        }
        Ok((Self::from_values(n_states, n_actions, values)?, env_id.to_string()))
    }

    pub fn save_csv(&self, env_id: &str, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv(env_id).as_bytes())?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<(Self, String)> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Epsilon-greedy behaviour with uniform tie-breaking over the argmax set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonGreedy {
    pub epsilon: f64,
}

impl EpsilonGreedy {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
        }
        Ok(Self { epsilon })
    }

    /// Closed-form action distribution in `state`.
    pub fn action_probs(&self, q: &QTable, state: usize) -> Vec<f64> {
        let n = q.n_actions() as f64;
        let greedy = q.greedy_actions(state);
        let mut probs = vec![self.epsilon / n; q.n_actions()];
        let share = (1.0 - self.epsilon) / greedy.len() as f64;
        for a in greedy {
            probs[a] += share;
        }
        probs
    }
}

pub fn select_action<R: Rng + ?Sized>(q: &QTable, state: usize, policy: &EpsilonGreedy, rng: &mut R) -> usize {
    if rng.random::<f64>() < policy.epsilon {
        rng.random_range(0..q.n_actions())
    } else {
        *q.greedy_actions(state).choose(rng).expect("rows are non-empty")
    }
}

/// One temporal-difference update of `Q(state, action)`.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    q: &mut QTable,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
    terminal: bool,
    alpha: f64,
    gamma: f64,
) {
    let bootstrap = if terminal { 0.0 } else { gamma * q.max_value(next_state) };
    let current = q.get(state, action);
    q.set(state, action, current + alpha * (reward + bootstrap - current));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonDecay {
    pub end: f64,
    /// Episodes over which epsilon falls linearly to `end`.
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: Option<EpsilonDecay>,
    /// Start each episode from a uniformly drawn non-terminal cell.
    pub exploring_starts: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            max_steps: 100,
            alpha: 0.1,
            gamma: 0.99,
            epsilon: 0.1,
            epsilon_decay: None,
            exploring_starts: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.episodes == 0 || self.max_steps == 0 {
            return bad("episodes and max_steps must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        EpsilonGreedy::new(self.epsilon)?;
        if let Some(decay) = self.epsilon_decay {
            EpsilonGreedy::new(decay.end)?;
        }
        Ok(())
    }

    fn epsilon_at(&self, episode: usize) -> f64 {
        match self.epsilon_decay {
            Some(d) if d.episodes > 0 => {
                let frac = (episode as f64 / d.episodes as f64).min(1.0);
                self.epsilon + (d.end - self.epsilon) * frac
            }
            Some(d) => d.end,
            None => self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    Cold,
    Warm(&'a DemoSet),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
}

impl LearningCurve {
    pub fn episodes_to_first_success(&self) -> Option<usize> {
        self.records.iter().find(|r| r.success).map(|r| r.episode)
    }

    /// First episode at which the success rate over the trailing `window`
    /// episodes reaches `threshold`.
    pub fn episodes_to_rolling_success(&self, threshold: f64, window: usize) -> Option<usize> {
        let mut hits = 0usize;
        for (i, r) in self.records.iter().enumerate() {
            hits += r.success as usize;
            if i >= window {
                hits -= self.records[i - window].success as usize;
            }
            if i + 1 >= window && hits as f64 >= threshold * window as f64 {
                return Some(r.episode);
            }
        }
        None
    }

    /// Trailing-window success rate per episode (shorter windows at the start).
    pub fn smoothed_success(&self, window: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.records.len());
        let mut hits = 0usize;
        for (i, r) in self.records.iter().enumerate() {
            hits += r.success as usize;
            if i >= window {
                hits -= self.records[i - window].success as usize;
            }
            out.push(hits as f64 / (i + 1).min(window) as f64);
        }
        out
    }

    /// CSV with columns `seed,episode,return,steps,success`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "episode", "return", "steps", "success"])?;
        for r in &self.records {
            w.write_record([
                self.seed.to_string(),
                r.episode.to_string(),
                r.ret.to_string(),
                r.steps.to_string(),
                (r.success as u8).to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn initial_table(env: &GridSpec, init: Init<'_>, gamma: f64) -> Result<QTable> {
    let mut q = QTable::zeros(env.n_states(), env.n_actions());
    if let Init::Warm(demos) = init {
        if demos.env_id() != env.id() {
            return Err(Error::DemoData(format!(
                "demos recorded on {:?}, training on {:?}",
                demos.env_id(),
                env.id()
            )));
        }
        warm_start_q(&mut q, demos, gamma)?;
    }
    Ok(q)
}

/// Episodic Q-learning on a grid world.
pub fn train(env: &GridSpec, config: &TrainConfig, init: Init<'_>) -> Result<(QTable, LearningCurve)> {
    config.validate()?;
    let mut q = initial_table(env, init, config.gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let free: Vec<usize> = (0..env.n_states()).filter(|&c| !env.is_terminal(c)).collect();
    let mut records = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let policy = EpsilonGreedy::new(config.epsilon_at(episode))?;
        let mut cell = if config.exploring_starts {
            *free.choose(&mut rng).expect("grids have a free start cell")
        } else {
            env.start().cell
        };
        let mut ret = 0.0;
        let mut steps = 0;
        let mut success = false;
        while steps < config.max_steps {
            let action = select_action(&q, cell, &policy, &mut rng);
            let grid_action = GridAction::from_index(action).expect("four actions");
            let out = grid_step(env, GridState::new(cell), grid_action)?;
            let next = out.next_state.cell;
            q_update(&mut q, cell, action, out.reward, next, out.terminal, config.alpha, config.gamma);
            ret += out.reward;
            steps += 1;
            cell = next;
            if out.terminal {
                success = out.reward > 0.0;
                break;
            }
        }
        records.push(EpisodeRecord {
            episode,
            ret,
            steps,
            success,
        });
    }
    Ok((
        q,
        LearningCurve {
            seed: config.seed,
            records,
        },
    ))
}

/// Outcome of one greedy rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub cells: Vec<usize>,
    pub actions: Vec<usize>,
    pub success: bool,
}

/// Follows the greedy policy from the start cell (ties broken at random).
pub fn greedy_rollout<R: Rng + ?Sized>(env: &GridSpec, q: &QTable, max_steps: usize, rng: &mut R) -> Result<Rollout> {
    let mut cell = env.start().cell;
    let mut cells = vec![cell];
    let mut actions = Vec::new();
    for _ in 0..max_steps {
        let action = *q.greedy_actions(cell).choose(rng).expect("rows are non-empty");
        let out = grid_step(env, GridState::new(cell), GridAction::from_index(action).expect("four actions"))?;
        actions.push(action);
        cell = out.next_state.cell;
        cells.push(cell);
        if out.terminal {
            return Ok(Rollout {
                cells,
                actions,
                success: out.reward > 0.0,
            });
        }
    }
    Ok(Rollout {
        cells,
        actions,
        success: false,
    })
}

pub fn greedy_success_rate<R: Rng + ?Sized>(
    env: &GridSpec,
    q: &QTable,
    rollouts: usize,
    max_steps: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut wins = 0;
    for _ in 0..rollouts {
        wins += greedy_rollout(env, q, max_steps, rng)?.success as usize;
    }
    Ok(wins as f64 / rollouts as f64)
}

/// `n` greedy rollouts of `q` from the start cell, rollout `i` breaking ties
/// with seed `seed + i`. Fails listing the rollouts that missed the goal.
pub fn greedy_demos(env: &GridSpec, q: &QTable, n: usize, seed: u64) -> Result<DemoSet> {
    if n == 0 {
        return Err(Error::Config("at least one demonstration is required".into()));
    }
    let mut trajectories = Vec::with_capacity(n);
    let mut failed = Vec::new();
    for i in 0..n as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + i);
        let r = greedy_rollout(env, q, env.max_steps(), &mut rng)?;
        if r.success {
            let states = r.cells.iter().map(|&c| vec![c as f64]).collect();
            trajectories.push(Trajectory::new(states, r.actions, true)?);
        } else {
            failed.push(i);
        }
    }
    if !failed.is_empty() {
        return Err(Error::Demonstrator(format!("greedy rollouts {failed:?} missed the goal")));
    }
    DemoSet::new(env.id(), trajectories)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Greedy rollouts that must all succeed.
    pub check_rollouts: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            episodes: 100_000,
            max_steps: 100,
            alpha: 0.5,
            gamma: 0.99,
            epsilon: 0.3,
            seed: 0,
            check_rollouts: 20,
        }
    }
}

/// Trains a converged table whose greedy actions define optimality.
///
/// Episodes use exploring starts so every reachable cell converges, not just
/// those near the start.
pub fn train_oracle(env: &GridSpec, config: &OracleConfig) -> Result<QTable> {
    let train_cfg = TrainConfig {
        episodes: config.episodes,
        max_steps: config.max_steps,
        alpha: config.alpha,
        gamma: config.gamma,
        epsilon: config.epsilon,
        epsilon_decay: None,
        exploring_starts: true,
        seed: config.seed,
    };
    let (q, _) = train(env, &train_cfg, Init::Cold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let rate = greedy_success_rate(env, &q, config.check_rollouts.max(1), config.max_steps, &mut rng)?;
    if rate < 1.0 {
        return Err(Error::OracleNotConverged(format!(
            "greedy success rate {rate} after {} episodes",
            config.episodes
        )));
    }
    Ok(q)
}
