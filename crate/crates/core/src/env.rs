//! Environment abstraction shared by the grid world and point navigation.

use rand::Rng;

use crate::error::Result;

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub next_state: S,
    pub reward: f64,
    pub terminal: bool,
    /// Step budget exhausted without reaching a terminal state.
    pub truncated: bool,
}

/// Episodic, discrete-action environment.
///
/// `transition` is a pure function of `(state, action)`; step budgets are
/// enforced by [`Episode`].
pub trait Environment {
    type State: Clone + std::fmt::Debug;

    /// Stable identifier written into demo files and snapshots.
    fn id(&self) -> String;
    fn n_actions(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    fn transition(&self, state: &Self::State, action: usize) -> Result<StepOutcome<Self::State>>;
    /// Whether `state` is the rewarded goal (as opposed to a failure terminal).
    fn is_goal(&self, state: &Self::State) -> bool;

    /// Network input for the function-approximation agent.
    fn features(&self, state: &Self::State) -> Vec<f64>;
    fn feature_dim(&self) -> usize;

    /// State representation used in demonstration files.
    fn encode(&self, state: &Self::State) -> Vec<f64>;
    fn decode(&self, raw: &[f64]) -> Result<Self::State>;
}

/// A running episode: tracks the step count and marks truncation.
#[derive(Debug)]
pub struct Episode<'e, E: Environment> {
    env: &'e E,
    state: E::State,
    steps: usize,
    done: bool,
}

impl<'e, E: Environment> Episode<'e, E> {
    pub fn new<R: Rng + ?Sized>(env: &'e E, rng: &mut R) -> Self {
        Self::from_state(env, env.initial_state(rng))
    }

    pub fn from_state(env: &'e E, state: E::State) -> Self {
        Self {
            env,
            state,
            steps: 0,
            done: false,
        }
    }

    pub fn state(&self) -> &E::State {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome<E::State>> {
        let mut outcome = self.env.transition(&self.state, action)?;
        self.steps += 1;
        if !outcome.terminal && self.steps >= self.env.max_steps() {
            outcome.truncated = true;
        }
        self.done = outcome.terminal || outcome.truncated;
        self.state = outcome.next_state.clone();
        Ok(outcome)
    }
}
