//! Demonstration data, sparse-return value estimates and Q warm-starting.
//!
//! Under a sparse terminal reward of 1 the return from step `t` of a
//! successful trajectory of length `T` is exactly `gamma^(T - t)`. Those
//! returns seed the Q-table (tabular agent) or the demo replay buffer
//! (function-approximation agent).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::QTable;

/// States `s_0..=s_T` and actions `a_0..a_{T-1}` of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<Vec<f64>>,
    actions: Vec<usize>,
    success: bool,
}

impl Trajectory {
    /// `states` includes the final state, so it is one longer than `actions`.
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<usize>, success: bool) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::DemoData("trajectory has no steps".into()));
        }
        if states.len() != actions.len() + 1 {
            return Err(Error::DemoData(format!(
                "{} states for {} actions; expected one more state than actions",
                states.len(),
                actions.len()
            )));
        }
        let dim = states[0].len();
        if dim == 0 || states.iter().any(|s| s.len() != dim) {
            return Err(Error::DemoData("state dimensionality mismatch".into()));
        }
        if states.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(Self {
            states,
            actions,
            success,
        })
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn success(&self) -> bool {
        self.success
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectories are non-empty")
    }

    /// `(s_t, a_t)` pairs in order.
    pub fn steps(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.states.iter().zip(&self.actions).map(|(s, &a)| (s.as_slice(), a))
    }

    /// `(s_t, a_t, s_{t+1})` triples in order.
    pub fn transitions(&self) -> impl Iterator<Item = (&[f64], usize, &[f64])> + '_ {
        self.states
            .windows(2)
            .zip(&self.actions)
            .map(|(w, &a)| (w[0].as_slice(), a, w[1].as_slice()))
    }
}

/// Non-empty collection of successful trajectories from one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    env_id: String,
    trajectories: Vec<Trajectory>,
}

impl DemoSet {
    pub fn new(env_id: impl Into<String>, trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories.first().ok_or(Error::NoTrajectories)?;
        if trajectories.iter().any(|t| !t.success) {
            return Err(Error::UnsuccessfulTrajectory);
        }
        let dim = first.state_dim();
        if trajectories.iter().any(|t| t.state_dim() != dim) {
            return Err(Error::DemoData("state dimensionality mismatch".into()));
        }
        Ok(Self {
            env_id: env_id.into(),
            trajectories,
        })
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories[0].state_dim()
    }

    /// The first `n` trajectories.
    pub fn take(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(Error::DemoData(format!(
                "requested {n} demonstrations, only {} available",
                self.len()
            )));
        }
        Self::new(self.env_id.clone(), self.trajectories[..n].to_vec())
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// Discounted sparse returns `gamma^(T - t)` for `t = 0..T`.
pub fn compute_returns(traj: &Trajectory, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    if !traj.success() {
        return Err(Error::UnsuccessfulTrajectory);
    }
    let horizon = traj.len();
    Ok((0..horizon).map(|t| gamma.powi((horizon - t) as i32)).collect())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("discount {gamma} outside (0, 1]")))
    }
}

/// Exact-bits key for a state vector.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey(Vec<u64>);

impl StateKey {
    pub fn new(state: &[f64]) -> Self {
        // Normalise -0.0 so it keys identically to 0.0.
        Self(state.iter().map(|v| (v + 0.0).to_bits()).collect())
    }
}

/// Per-state value estimates from demonstrations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueEstimateTable {
    entries: BTreeMap<StateKey, f64>,
}

impl ValueEstimateTable {
    pub fn get(&self, state: &[f64]) -> Option<f64> {
        self.entries.get(&StateKey::new(state)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.values().copied()
    }
}

/// `V(s)` is the largest return observed from `s` across all trajectories;
/// every such return lower-bounds the optimal value.
pub fn estimate_values(demos: &DemoSet, gamma: f64) -> Result<ValueEstimateTable> {
    let mut table = ValueEstimateTable::default();
    for traj in demos.trajectories() {
        let returns = compute_returns(traj, gamma)?;
        for ((state, _), g) in traj.steps().zip(returns) {
            let slot = table.entries.entry(StateKey::new(state)).or_insert(g);
            if g > *slot {
                *slot = g;
            }
        }
    }
    Ok(table)
}

/// Writes `Q(s_t, a_t) <- V(s_t)` for every demonstrated pair; other entries
/// are left as they are (zero for a fresh table).
pub fn warm_start_q(q: &mut QTable, demos: &DemoSet, gamma: f64) -> Result<()> {
    let values = estimate_values(demos, gamma)?;
    for traj in demos.trajectories() {
        cell_index(traj.final_state(), q.n_states())?;
        for (state, action) in traj.steps() {
            let cell = cell_index(state, q.n_states())?;
            if action >= q.n_actions() {
                return Err(Error::DemoData(format!(
                    "action {action} outside {} actions",
                    q.n_actions()
                )));
            }
            let v = values.get(state).expect("every demo state has an estimate");
            q.set(cell, action, v);
        }
    }
    Ok(())
}

/// Interprets a tabular demo state (a single integral cell index).
pub fn cell_index(state: &[f64], n_states: usize) -> Result<usize> {
    match state {
        [v] if v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < n_states => Ok(*v as usize),
        _ => Err(Error::DemoData(format!(
            "{state:?} is not a cell index below {n_states}"
        ))),
    }
}

/// Monte-Carlo regression target for the demo replay buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoTarget {
    pub state: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

/// One `(s_t, a_t, gamma^(T - t))` tuple per demonstrated step.
pub fn demo_targets(demos: &DemoSet, gamma: f64) -> Result<Vec<DemoTarget>> {
    let mut out = Vec::with_capacity(demos.total_steps());
    for traj in demos.trajectories() {
        let returns = compute_returns(traj, gamma)?;
        for ((state, action), target) in traj.steps().zip(returns) {
            out.push(DemoTarget {
                state: state.to_vec(),
                action,
                target,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    env_id: String,
    states: Vec<Vec<f64>>,
    actions: Vec<usize>,
    success: bool,
}

/// Writes one JSON object per trajectory.
pub fn save_demos(demos: &DemoSet, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for traj in demos.trajectories() {
        let record = TrajectoryRecord {
            env_id: demos.env_id.clone(),
            states: traj.states.clone(),
            actions: traj.actions.clone(),
            success: traj.success,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<DemoSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut env_id: Option<String> = None;
    let mut trajectories = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let err = |msg: String| Error::DemoRecord {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| err(format!("malformed record: {e}")))?;
        if !record.success {
            return Err(err("unsuccessful trajectory".into()));
        }
        match &env_id {
            Some(id) if *id != record.env_id => {
                return Err(err(format!("env_id {:?} differs from {id:?}", record.env_id)))
            }
            Some(_) => {}
            None => env_id = Some(record.env_id.clone()),
        }
        let traj = Trajectory::new(record.states, record.actions, true).map_err(|e| err(e.to_string()))?;
        if let Some(first) = trajectories.first() {
            let first: &Trajectory = first;
            if first.state_dim() != traj.state_dim() {
                return Err(err(format!(
                    "state dimensionality {} differs from {}",
                    traj.state_dim(),
                    first.state_dim()
                )));
            }
        }
        trajectories.push(traj);
    }
    let env_id = env_id.ok_or(Error::NoTrajectories)?;
    DemoSet::new(env_id, trajectories)
}
