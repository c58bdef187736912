//! Continuous-state, discrete-action point navigation with a sparse goal
//! reward, plus scripted demonstrators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demos::{DemoSet, Trajectory};
use crate::env::{Environment, StepOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let mut p = [0.0; 2];
        for i in 0..2 {
            p[i] = if self.max[i] > self.min[i] {
                rng.random_range(self.min[i]..self.max[i])
            } else {
                self.min[i]
            };
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// 1 on reaching the goal, 0 otherwise.
    #[default]
    Sparse,
    /// Sparse reward plus a progress term `DENSE_SHAPING * (d(s) - d(s'))`.
    Dense,
}

pub const DENSE_SHAPING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointNavSpec {
    pub goal_center: [f64; 2],
    pub goal_radius: f64,
    pub dt: f64,
    pub thrust: f64,
    pub drag: f64,
    pub v_max: f64,
    pub max_steps: usize,
    pub start_region: Region,
    pub reward: RewardMode,
}

// A scripted optimal run takes roughly 50-60 steps with these constants, and a
// uniformly random policy essentially never reaches the goal.
impl Default for PointNavSpec {
    fn default() -> Self {
        Self {
            goal_center: [0.75, 0.75],
            goal_radius: 0.07,
            dt: 0.05,
            thrust: 1.0,
            drag: 0.1,
            v_max: 1.0,
            max_steps: 200,
            start_region: Region {
                min: [0.1, 0.1],
                max: [0.25, 0.25],
            },
            reward: RewardMode::Sparse,
        }
    }
}

impl PointNavSpec {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serialises");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidPointNav(msg.to_string()));
        let finite = self.goal_center.iter().all(|v| v.is_finite())
            && [self.goal_radius, self.dt, self.thrust, self.drag, self.v_max]
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite constant");
        }
        if self.goal_radius <= 0.0 || self.dt <= 0.0 || self.thrust <= 0.0 || self.v_max <= 0.0 {
            return bad("goal_radius, dt, thrust and v_max must be positive");
        }
        if !(0.0..1.0).contains(&self.drag) {
            return bad("drag must lie in [0, 1)");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        let [gx, gy] = self.goal_center;
        let r = self.goal_radius;
        if gx - r < 0.0 || gx + r > 1.0 || gy - r < 0.0 || gy + r > 1.0 {
            return bad("goal region leaves the unit square");
        }
        let sr = &self.start_region;
        if (0..2).any(|i| sr.min[i] > sr.max[i] || sr.min[i] < 0.0 || sr.max[i] > 1.0) {
            return bad("start region must be a box inside the unit square");
        }
        // Closest point of the start box to the goal centre.
        let nearest = [gx.clamp(sr.min[0], sr.max[0]), gy.clamp(sr.min[1], sr.max[1])];
        if distance(nearest, self.goal_center) <= r {
            return bad("start region overlaps the goal region");
        }
        Ok(())
    }

    pub fn in_goal(&self, position: [f64; 2]) -> bool {
        distance(position, self.goal_center) <= self.goal_radius
    }

    pub fn goal_distance(&self, position: [f64; 2]) -> f64 {
        distance(position, self.goal_center)
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl PointState {
    pub fn at_rest(position: [f64; 2]) -> Self {
        Self {
            position,
            velocity: [0.0; 2],
        }
    }

    fn is_finite(&self) -> bool {
        self.position.iter().chain(&self.velocity).all(|v| v.is_finite())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointAction {
    ThrustUp,
    ThrustDown,
    ThrustLeft,
    ThrustRight,
    NoOp,
}

impl PointAction {
    pub const ALL: [PointAction; 5] = [
        PointAction::ThrustUp,
        PointAction::ThrustDown,
        PointAction::ThrustLeft,
        PointAction::ThrustRight,
        PointAction::NoOp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn direction(self) -> [f64; 2] {
        match self {
            PointAction::ThrustUp => [0.0, 1.0],
            PointAction::ThrustDown => [0.0, -1.0],
            PointAction::ThrustLeft => [-1.0, 0.0],
            PointAction::ThrustRight => [1.0, 0.0],
            PointAction::NoOp => [0.0, 0.0],
        }
    }

    fn thrust_along(axis: usize, positive: bool) -> Self {
        match (axis, positive) {
            (0, true) => PointAction::ThrustRight,
            (0, false) => PointAction::ThrustLeft,
            (_, true) => PointAction::ThrustUp,
            (_, false) => PointAction::ThrustDown,
        }
    }
}

/// Explicit-Euler step: drag and thrust update the velocity, then the
/// position moves and is clamped to the unit square.
pub fn point_step(spec: &PointNavSpec, state: &PointState, action: PointAction) -> Result<StepOutcome<PointState>> {
    if !state.is_finite() {
        return Err(Error::NonFiniteState);
    }
    if spec.in_goal(state.position) {
        return Err(Error::TerminalStep(format!("{:?}", state.position)));
    }
    let dir = action.direction();
    let mut next = *state;
    for i in 0..2 {
        let v = (1.0 - spec.drag) * state.velocity[i] + spec.thrust * dir[i] * spec.dt;
        next.velocity[i] = v.clamp(-spec.v_max, spec.v_max);
        next.position[i] = (state.position[i] + next.velocity[i] * spec.dt).clamp(0.0, 1.0);
    }
    let terminal = spec.in_goal(next.position);
    let mut reward = if terminal { 1.0 } else { 0.0 };
    if spec.reward == RewardMode::Dense {
        reward += DENSE_SHAPING * (spec.goal_distance(state.position) - spec.goal_distance(next.position));
    }
    Ok(StepOutcome {
        next_state: next,
        reward,
        terminal,
        truncated: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoQuality {
    Optimal,
    Suboptimal,
}

impl std::str::FromStr for DemoQuality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(DemoQuality::Optimal),
            "suboptimal" => Ok(DemoQuality::Suboptimal),
            other => Err(Error::Config(format!("unknown demo quality {other:?}"))),
        }
    }
}

/// Detour point visited by the suboptimal demonstrator before the goal.
pub const DETOUR_WAYPOINT: [f64; 2] = [0.15, 0.8];
const WAYPOINT_RADIUS: f64 = 0.1;

// Controller gain: desired speed per unit of remaining distance.
const APPROACH_GAIN: f64 = 2.5;
// Velocity error below which the controller coasts.
const COAST_BAND: f64 = 0.05;

/// Heads for `target`: picks the axis whose velocity lags the desired
/// approach velocity the most and thrusts along it. The desired speed shrinks
/// with the remaining distance, so the controller brakes whenever its current
/// velocity would overshoot.
fn steer(spec: &PointNavSpec, state: &PointState, target: [f64; 2]) -> PointAction {
    let mut best: Option<(usize, f64)> = None;
    for axis in 0..2 {
        let err = target[axis] - state.position[axis];
        let desired = (APPROACH_GAIN * err).clamp(-spec.v_max, spec.v_max);
        let gap = desired - state.velocity[axis];
        if best.is_none_or(|(_, g)| gap.abs() > g.abs()) {
            best = Some((axis, gap));
        }
    }
    match best {
        Some((axis, gap)) if gap.abs() > COAST_BAND => PointAction::thrust_along(axis, gap > 0.0),
        _ => PointAction::NoOp,
    }
}

/// Rolls out a scripted controller from a seeded start state.
///
/// The suboptimal controller first detours through [`DETOUR_WAYPOINT`].
pub fn scripted_demo(spec: &PointNavSpec, quality: DemoQuality, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = spec.initial_state(&mut rng);
    let mut states = vec![state.to_vec()];
    let mut actions = Vec::new();
    let mut detour_done = quality == DemoQuality::Optimal;
    for _ in 0..spec.max_steps {
        if !detour_done && distance(state.position, DETOUR_WAYPOINT) <= WAYPOINT_RADIUS {
            detour_done = true;
        }
        let target = if detour_done { spec.goal_center } else { DETOUR_WAYPOINT };
        let action = steer(spec, &state, target);
        let out = point_step(spec, &state, action)?;
        actions.push(action.index());
        states.push(out.next_state.to_vec());
        state = out.next_state;
        if out.terminal {
            return Trajectory::new(states, actions, true);
        }
    }
    Err(Error::Demonstrator(format!(
        "{quality:?} controller (seed {seed}) missed the goal within {} steps",
        spec.max_steps
    )))
}

/// `n` demonstrations with start seeds `seed, seed + 1, ...`; fails listing
/// every seed whose rollout missed the goal.
pub fn scripted_demos(spec: &PointNavSpec, quality: DemoQuality, n: usize, seed: u64) -> Result<DemoSet> {
    if n == 0 {
        return Err(Error::Config("at least one demonstration is required".into()));
    }
    let mut trajectories = Vec::with_capacity(n);
    let mut failed = Vec::new();
    for i in 0..n as u64 {
        match scripted_demo(spec, quality, seed + i) {
            Ok(t) => trajectories.push(t),
            Err(Error::Demonstrator(_)) => failed.push(seed + i),
            Err(e) => return Err(e),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Demonstrator(format!(
            "{quality:?} controller missed the goal for seeds {failed:?}"
        )));
    }
    DemoSet::new(spec.id(), trajectories)
}

impl Environment for PointNavSpec {
    type State = PointState;

    fn id(&self) -> String {
        format!("pointnav-{}", &self.fingerprint()[..16])
    }

    fn n_actions(&self) -> usize {
        PointAction::ALL.len()
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> PointState {
        PointState::at_rest(self.start_region.sample(rng))
    }

    fn transition(&self, state: &PointState, action: usize) -> Result<StepOutcome<PointState>> {
        let action = PointAction::from_index(action)
            .ok_or_else(|| Error::InvalidPointNav(format!("action {action} out of range")))?;
        point_step(self, state, action)
    }

    fn is_goal(&self, state: &PointState) -> bool {
        self.in_goal(state.position)
    }

    fn features(&self, state: &PointState) -> Vec<f64> {
        state.to_vec()
    }

    fn feature_dim(&self) -> usize {
        4
    }

    fn encode(&self, state: &PointState) -> Vec<f64> {
        state.to_vec()
    }

    fn decode(&self, raw: &[f64]) -> Result<PointState> {
        match raw {
            [px, py, vx, vy] => {
                let s = PointState {
                    position: [*px, *py],
                    velocity: [*vx, *vy],
                };
                if s.is_finite() {
                    Ok(s)
                } else {
                    Err(Error::NonFiniteState)
                }
            }
            _ => Err(Error::DemoData(format!(
                "point-navigation states have 4 components, got {}",
                raw.len()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        PointNavSpec::default().validate().unwrap();
    }

    #[test]
    fn explicit_euler_arithmetic() {
        let spec = PointNavSpec {
            drag: 0.0,
            dt: 1.0,
            thrust: 0.1,
            ..PointNavSpec::default()
        };
        let s = PointState::at_rest([0.3, 0.3]);
        let out = point_step(&spec, &s, PointAction::ThrustRight).unwrap();
        assert!((out.next_state.velocity[0] - 0.1).abs() < 1e-15);
        assert_eq!(out.next_state.velocity[1], 0.0);
        assert!((out.next_state.position[0] - 0.4).abs() < 1e-15);
        assert_eq!(out.next_state.position[1], 0.3);
    }

    #[test]
    fn noop_at_rest_is_a_fixed_point() {
        let spec = PointNavSpec::default();
        let s = PointState::at_rest([0.2, 0.5]);
        let out = point_step(&spec, &s, PointAction::NoOp).unwrap();
        assert_eq!(out.next_state, s);
        assert_eq!(out.reward, 0.0);
        assert!(!out.terminal);
    }

    #[test]
    fn crossing_goal_boundary_terminates_with_reward() {
        let spec = PointNavSpec::default();
        let [gx, gy] = spec.goal_center;
        let s = PointState {
            position: [gx - spec.goal_radius - 0.005, gy],
            velocity: [0.2, 0.0],
        };
        let out = point_step(&spec, &s, PointAction::ThrustRight).unwrap();
        assert!(out.terminal);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn position_clamped_and_velocity_bounded() {
        let spec = PointNavSpec::default();
        let s = PointState {
            position: [0.99, 0.5],
            velocity: [1.0, 0.0],
        };
        let out = point_step(&spec, &s, PointAction::ThrustRight).unwrap();
        assert_eq!(out.next_state.position[0], 1.0);
        assert!(out.next_state.velocity[0] <= spec.v_max);
    }

    #[test]
    fn non_finite_state_rejected() {
        let spec = PointNavSpec::default();
        let s = PointState::at_rest([f64::NAN, 0.5]);
        assert!(matches!(point_step(&spec, &s, PointAction::NoOp), Err(Error::NonFiniteState)));
    }

    #[test]
    fn invalid_specs_rejected() {
        let overlap = PointNavSpec {
            goal_center: [0.2, 0.2],
            ..PointNavSpec::default()
        };
        assert!(overlap.validate().is_err());
        let outside = PointNavSpec {
            goal_center: [0.98, 0.5],
            ..PointNavSpec::default()
        };
        assert!(outside.validate().is_err());
        let drag = PointNavSpec {
            drag: 1.0,
            ..PointNavSpec::default()
        };
        assert!(drag.validate().is_err());
    }

    #[test]
    fn dense_reward_tracks_progress() {
        let spec = PointNavSpec {
            reward: RewardMode::Dense,
            ..PointNavSpec::default()
        };
        let s = PointState {
            position: [0.3, 0.3],
            velocity: [0.5, 0.5],
        };
        let out = point_step(&spec, &s, PointAction::NoOp).unwrap();
        let progress = spec.goal_distance(s.position) - spec.goal_distance(out.next_state.position);
        assert!(progress > 0.0);
        assert!((out.reward - DENSE_SHAPING * progress).abs() < 1e-15);
    }

    #[test]
    fn scripted_demo_is_deterministic() {
        let spec = PointNavSpec::default();
        let a = scripted_demo(&spec, DemoQuality::Optimal, 7).unwrap();
        let b = scripted_demo(&spec, DemoQuality::Optimal, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mistuned_spec_fails_demonstrator() {
        let spec = PointNavSpec {
            max_steps: 5,
            ..PointNavSpec::default()
        };
        let err = scripted_demo(&spec, DemoQuality::Optimal, 0).unwrap_err();
        assert!(matches!(err, Error::Demonstrator(_)));
    }
}
