//! Deterministic sparse-reward grid world in the style of FrozenLake.
//!
//! Cells are indexed row-major. Holes and the goal are terminal; only entering
//! the goal yields reward 1. Moves off the edge either wrap around or clamp.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{Environment, StepOutcome};
use crate::error::{Error, Result};

/// Step budget used by the presets.
pub const PRESET_MAX_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            GridAction::Up => (-1, 0),
            GridAction::Down => (1, 0),
            GridAction::Left => (0, -1),
            GridAction::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridState {
    pub cell: usize,
}

impl GridState {
    pub fn new(cell: usize) -> Self {
        Self { cell }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Config(format!("unknown difficulty {other:?}"))),
        }
    }
}

// Frozen preset layouts (version 1). Changing any of these invalidates cached
// oracles and every recorded regret table.
const EASY_MAP: &str = "\
SFFHF
FFFFF
FFFFF
FHFFF
FFFHG";

const MEDIUM_MAP: &str = "\
SFFFFFHFF
FFFFHFHFF
FFFFFFFFH
FFFFFHFHF
FFFFFFHHF
HFFFFFFFF
FFFFFFFFF
FFHFFFFFF
HFFFHFFFG";

const HARD_MAP: &str = "\
SFFFHFFFFFFFF
FFFFFFFHHHHFF
FFFFFFFFFFHHF
FFFFFFFHFHFFF
HFFFFFFFFFFHF
HHFFFFFFFFFFF
FFFFFFFFFFFFH
FHFFFFFFFFFFF
FHHFFHFFFFFFF
FHFFHHHFFFFFF
HFHFHFFFFFFFF
FFFFFFHHFFFFF
FHFHFHFFFFFFG";

/// Grid-world definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    width: usize,
    height: usize,
    start: usize,
    goal: usize,
    holes: BTreeSet<usize>,
    wrap_around: bool,
    max_steps: usize,
}

impl GridSpec {
    pub fn new(
        width: usize,
        height: usize,
        start: usize,
        goal: usize,
        holes: BTreeSet<usize>,
        wrap_around: bool,
        max_steps: usize,
    ) -> Result<Self> {
        let spec = Self {
            width,
            height,
            start,
            goal,
            holes,
            wrap_around,
            max_steps,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGrid(msg));
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be positive".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        let n = self.n_states();
        if self.start >= n || self.goal >= n {
            return bad(format!("start/goal outside a {n}-cell grid"));
        }
        if let Some(h) = self.holes.iter().find(|&&h| h >= n) {
            return bad(format!("hole {h} outside a {n}-cell grid"));
        }
        if self.start == self.goal {
            return bad("start and goal coincide".into());
        }
        if self.holes.contains(&self.start) || self.holes.contains(&self.goal) {
            return bad("start or goal is a hole".into());
        }
        let dist = self.manhattan(self.start, self.goal);
        if self.max_steps < dist {
            return bad(format!(
                "max_steps {} below start-goal distance {dist}",
                self.max_steps
            ));
        }
        Ok(())
    }

    pub fn preset(tier: Difficulty) -> Self {
        let map = match tier {
            Difficulty::Easy => EASY_MAP,
            Difficulty::Medium => MEDIUM_MAP,
            Difficulty::Hard => HARD_MAP,
        };
        Self::parse_map(map, false, PRESET_MAX_STEPS).expect("preset maps are valid")
    }

    /// Parses the plain-text map format: one row per line using `S`, `G`,
    /// `H` and `F`. Blank lines and `#` comments are ignored.
    pub fn parse_map(text: &str, wrap_around: bool, max_steps: usize) -> Result<Self> {
        let mut width = None;
        let mut height = 0;
        let mut start = None;
        let mut goal = None;
        let mut holes = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::MapParse {
                line: lineno + 1,
                msg,
            };
            let w = *width.get_or_insert(line.chars().count());
            if line.chars().count() != w {
                return Err(err(format!(
                    "row has {} cells, expected {w}",
                    line.chars().count()
                )));
            }
            for (col, ch) in line.chars().enumerate() {
                let cell = height * w + col;
                match ch {
                    'S' if start.is_some() => return Err(err("second start cell".into())),
                    'S' => start = Some(cell),
                    'G' if goal.is_some() => return Err(err("second goal cell".into())),
                    'G' => goal = Some(cell),
                    'H' => {
                        holes.insert(cell);
                    }
                    'F' => {}
                    other => return Err(err(format!("unknown cell character {other:?}"))),
                }
            }
            height += 1;
        }
        let width = width.ok_or_else(|| Error::InvalidGrid("empty map".into()))?;
        let start = start.ok_or_else(|| Error::InvalidGrid("map has no start cell".into()))?;
        let goal = goal.ok_or_else(|| Error::InvalidGrid("map has no goal cell".into()))?;
        Self::new(width, height, start, goal, holes, wrap_around, max_steps)
    }

    pub fn from_map_file(path: &Path, wrap_around: bool, max_steps: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_map(&text, wrap_around, max_steps)
    }

    pub fn to_map_string(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                let cell = row * self.width + col;
                out.push(if cell == self.start {
                    'S'
                } else if cell == self.goal {
                    'G'
                } else if self.holes.contains(&cell) {
                    'H'
                } else {
                    'F'
                });
            }
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 over the layout and dynamics flags.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_map_string().as_bytes());
        hasher.update([self.wrap_around as u8]);
        hasher.update((self.max_steps as u64).to_le_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> GridState {
        GridState::new(self.start)
    }

    pub fn goal(&self) -> GridState {
        GridState::new(self.goal)
    }

    pub fn holes(&self) -> &BTreeSet<usize> {
        &self.holes
    }

    pub fn wrap_around(&self) -> bool {
        self.wrap_around
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Result<Self> {
        self.max_steps = max_steps;
        self.validate()?;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn is_terminal(&self, cell: usize) -> bool {
        cell == self.goal || self.holes.contains(&cell)
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    /// `(x, y)` scaled into `[0, 1]`.
    pub fn normalized_coords(&self, cell: usize) -> [f64; 2] {
        let (row, col) = self.coords(cell);
        let scale = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
        [scale(col, self.width), scale(row, self.height)]
    }

    fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.coords(a);
        let (rb, cb) = self.coords(b);
        let dr = ra.abs_diff(rb);
        let dc = ca.abs_diff(cb);
        if self.wrap_around {
            dr.min(self.height - dr) + dc.min(self.width - dc)
        } else {
            dr + dc
        }
    }

    /// Cell reached by moving from `cell`; ignores terminal status.
    pub fn move_cell(&self, cell: usize, action: GridAction) -> usize {
        let (row, col) = self.coords(cell);
        let (dr, dc) = action.delta();
        let (h, w) = (self.height as isize, self.width as isize);
        let (mut r, mut c) = (row as isize + dr, col as isize + dc);
        if self.wrap_around {
            r = r.rem_euclid(h);
            c = c.rem_euclid(w);
        } else if r < 0 || r >= h || c < 0 || c >= w {
            return cell;
        }
        (r * w + c) as usize
    }

    /// Moves avoiding holes, from every cell to the goal; `None` where the
    /// goal is unreachable. Terminal cells other than the goal are `None`.
    pub fn distances_to_goal(&self) -> Vec<Option<usize>> {
        let n = self.n_states();
        let mut preds = vec![Vec::new(); n];
        for cell in (0..n).filter(|&c| !self.is_terminal(c)) {
            for a in GridAction::ALL {
                let next = self.move_cell(cell, a);
                if next != cell {
                    preds[next].push(cell);
                }
            }
        }
        let mut dist = vec![None; n];
        dist[self.goal] = Some(0);
        let mut queue = VecDeque::from([self.goal]);
        while let Some(cell) = queue.pop_front() {
            let d = dist[cell].expect("queued cells have a distance");
            for &p in &preds[cell] {
                if dist[p].is_none() {
                    dist[p] = Some(d + 1);
                    queue.push_back(p);
                }
            }
        }
        dist
    }

    /// Length of the shortest hole-free start-to-goal path.
    pub fn shortest_path_len(&self) -> Option<usize> {
        self.distances_to_goal()[self.start]
    }

    /// Actions that move strictly closer to the goal, per non-terminal cell.
    pub fn shortest_path_actions(&self) -> Vec<Option<Vec<usize>>> {
        let dist = self.distances_to_goal();
        (0..self.n_states())
            .map(|cell| {
                if self.is_terminal(cell) {
                    return None;
                }
                let d = dist[cell]?;
                Some(
                    GridAction::ALL
                        .iter()
                        .filter(|&&a| {
                            let next = self.move_cell(cell, a);
                            next != cell && dist[next] == Some(d - 1)
                        })
                        .map(|a| a.index())
                        .collect(),
                )
            })
            .collect()
    }
}

/// One transition of the deterministic dynamics.
pub fn grid_step(spec: &GridSpec, state: GridState, action: GridAction) -> Result<StepOutcome<GridState>> {
    if state.cell >= spec.n_states() {
        return Err(Error::InvalidGrid(format!("cell {} out of range", state.cell)));
    }
    if spec.is_terminal(state.cell) {
        return Err(Error::TerminalStep(format!("cell {}", state.cell)));
    }
    let next = spec.move_cell(state.cell, action);
    let reached_goal = next == spec.goal;
    Ok(StepOutcome {
        next_state: GridState::new(next),
        reward: if reached_goal { 1.0 } else { 0.0 },
        terminal: spec.is_terminal(next),
        truncated: false,
    })
}

pub fn make_preset(tier: Difficulty) -> GridSpec {
    GridSpec::preset(tier)
}

pub fn enumerate_states(spec: &GridSpec) -> Vec<GridState> {
    (0..spec.n_states()).map(GridState::new).collect()
}

impl Environment for GridSpec {
    type State = GridState;

    fn id(&self) -> String {
        format!("grid-{}", &self.fingerprint()[..16])
    }

    fn n_actions(&self) -> usize {
        GridAction::ALL.len()
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn initial_state<R: Rng + ?Sized>(&self, _rng: &mut R) -> GridState {
        self.start()
    }

    fn transition(&self, state: &GridState, action: usize) -> Result<StepOutcome<GridState>> {
        let action = GridAction::from_index(action)
            .ok_or_else(|| Error::InvalidGrid(format!("action {action} out of range")))?;
        grid_step(self, *state, action)
    }

    fn is_goal(&self, state: &GridState) -> bool {
        state.cell == self.goal().cell
    }

    fn features(&self, state: &GridState) -> Vec<f64> {
        self.normalized_coords(state.cell).to_vec()
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn encode(&self, state: &GridState) -> Vec<f64> {
        vec![state.cell as f64]
    }

    fn decode(&self, raw: &[f64]) -> Result<GridState> {
        match raw {
            [v] if v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < self.n_states() => {
                Ok(GridState::new(*v as usize))
            }
            _ => Err(Error::DemoData(format!(
                "{raw:?} is not a cell index of a {}-cell grid",
                self.n_states()
            ))),
        }
    }
}
