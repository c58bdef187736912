//! Regret of epsilon-greedy policies measured as the expected frequency of
//! suboptimal actions, either averaged uniformly over states or weighted by
//! the on-policy state distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env_grid::{grid_step, GridAction, GridSpec, GridState};
use crate::error::{Error, Result};
use crate::tabular::{select_action, EpsilonGreedy, QTable};

/// Oracle values closer than this to the row maximum count as tied-optimal.
pub const OPTIMAL_TIE_TOLERANCE: f64 = 1e-6;

/// Stochastic policy over a finite state space with closed-form action
/// probabilities.
pub trait TabularPolicy {
    fn n_actions(&self) -> usize;
    fn action_probs(&self, state: usize) -> Vec<f64>;

    fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let probs = self.action_probs(state);
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }
}

/// Epsilon-greedy policy derived from a Q-table.
#[derive(Debug, Clone, Copy)]
pub struct QPolicy<'a> {
    pub q: &'a QTable,
    pub policy: EpsilonGreedy,
}

impl TabularPolicy for QPolicy<'_> {
    fn n_actions(&self) -> usize {
        self.q.n_actions()
    }

    fn action_probs(&self, state: usize) -> Vec<f64> {
        self.policy.action_probs(self.q, state)
    }

    fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        select_action(self.q, state, &self.policy, rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl TabularPolicy for UniformPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, _state: usize) -> Vec<f64> {
        vec![1.0 / self.n_actions as f64; self.n_actions]
    }

    fn sample<R: Rng + ?Sized>(&self, _state: usize, rng: &mut R) -> usize {
        rng.random_range(0..self.n_actions)
    }
}

/// Optimal actions per state. `None` marks a terminal state, which carries
/// no regret but still counts towards `|S|`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalActionMap {
    sets: Vec<Option<Vec<usize>>>,
}

impl OptimalActionMap {
    pub fn new(sets: Vec<Option<Vec<usize>>>) -> Result<Self> {
        if let Some(s) = sets.iter().position(|s| matches!(s, Some(v) if v.is_empty())) {
            return Err(Error::EmptyOptimalSet(s));
        }
        Ok(Self { sets })
    }

    /// Near-argmax sets of a converged table; terminal cells map to `None`.
    pub fn from_oracle(env: &GridSpec, oracle: &QTable) -> Self {
        let sets = (0..env.n_states())
            .map(|s| (!env.is_terminal(s)).then(|| oracle.near_greedy_actions(s, OPTIMAL_TIE_TOLERANCE)))
            .collect();
        Self { sets }
    }

    pub fn n_states(&self) -> usize {
        self.sets.len()
    }

    pub fn get(&self, state: usize) -> Option<&[usize]> {
        self.sets[state].as_deref()
    }
}

/// Probability mass over states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateDistribution {
    mass: Vec<f64>,
}

impl StateDistribution {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidDistribution("no states".into()));
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("masses sum to {total}")));
        }
        Ok(Self { mass })
    }

    pub fn uniform(n_states: usize) -> Self {
        Self {
            mass: vec![1.0 / n_states as f64; n_states],
        }
    }

    /// Normalises non-negative counts.
    pub fn from_counts(counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("no visits recorded".into()));
        }
        Self::new(counts.iter().map(|c| c / total).collect())
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_variation(&self, other: &StateDistribution) -> f64 {
        0.5 * self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Probability that the policy picks a non-optimal action in `state`.
pub fn state_regret<P: TabularPolicy>(policy: &P, optmap: &OptimalActionMap, state: usize) -> f64 {
    match optmap.get(state) {
        None => 0.0,
        Some(optimal) => policy
            .action_probs(state)
            .iter()
            .enumerate()
            .filter(|(a, _)| !optimal.contains(a))
            .map(|(_, p)| p)
            .sum(),
    }
}

/// State-weighted regret `sum_s d(s) * state_regret(s)`.
pub fn regret_expected<P: TabularPolicy>(policy: &P, optmap: &OptimalActionMap, d: &StateDistribution) -> Result<f64> {
    if d.mass.len() != optmap.n_states() {
        return Err(Error::InvalidDistribution(format!(
            "{} masses for {} states",
            d.mass.len(),
            optmap.n_states()
        )));
    }
    let total: f64 = d.mass.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("masses sum to {total}")));
    }
    Ok(d.mass
        .iter()
        .enumerate()
        .map(|(s, &m)| m * state_regret(policy, optmap, s))
        .sum())
}

/// Regret averaged uniformly over every state, terminal ones included.
pub fn regret_uniform<P: TabularPolicy>(policy: &P, optmap: &OptimalActionMap) -> Result<f64> {
    regret_expected(policy, optmap, &StateDistribution::uniform(optmap.n_states()))
}

/// Regret of the uniform policy with a unique optimal action: `(n - 1) / n`.
pub fn closed_form_case1(n_actions: usize) -> f64 {
    assert!(n_actions >= 1, "at least one action");
    (n_actions as f64 - 1.0) / n_actions as f64
}

/// Regret of a table whose demonstrated states are epsilon-greedy-correct and
/// whose other states act uniformly.
pub fn closed_form_case2(n_states: usize, n_demo_states: usize, epsilon: f64, n_actions: usize) -> f64 {
    assert!(n_demo_states <= n_states && n_states > 0, "demo states exceed state space");
    let na = n_actions as f64;
    let demo = n_demo_states as f64 * (epsilon - epsilon / na);
    let rest = (n_states - n_demo_states) as f64 * closed_form_case1(n_actions);
    (demo + rest) / n_states as f64
}

/// Finite deterministic MDP with an explicit start state.
pub trait TabularMdp {
    fn n_states(&self) -> usize;
    fn start(&self) -> usize;
    fn is_terminal(&self, state: usize) -> bool;
    fn next(&self, state: usize, action: usize) -> usize;
}

impl TabularMdp for GridSpec {
    fn n_states(&self) -> usize {
        GridSpec::n_states(self)
    }

    fn start(&self) -> usize {
        GridSpec::start(self).cell
    }

    fn is_terminal(&self, state: usize) -> bool {
        GridSpec::is_terminal(self, state)
    }

    fn next(&self, state: usize, action: usize) -> usize {
        let action = GridAction::from_index(action).expect("grid action index");
        grid_step(self, GridState::new(state), action)
            .expect("non-terminal cell")
            .next_state
            .cell
    }
}

/// Visit frequencies of `policy` over `n_rollouts` episodes of at most
/// `max_steps` steps. Every visited state counts once per step, including the
/// start state and a terminal state on entry.
pub fn estimate_onpolicy_distribution<M: TabularMdp, P: TabularPolicy>(
    env: &M,
    policy: &P,
    n_rollouts: usize,
    max_steps: usize,
    seed: u64,
) -> Result<StateDistribution> {
    Ok(StateDistribution::from_counts(&visit_counts(env, policy, n_rollouts, max_steps, seed)?)?)
}

fn visit_counts<M: TabularMdp, P: TabularPolicy>(
    env: &M,
    policy: &P,
    n_rollouts: usize,
    max_steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_rollouts == 0 {
        return Err(Error::Config("need at least one rollout".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0.0; env.n_states()];
    for _ in 0..n_rollouts {
        let mut s = env.start();
        counts[s] += 1.0;
        for _ in 0..max_steps {
            if env.is_terminal(s) {
                break;
            }
            s = env.next(s, policy.sample(s, &mut rng));
            counts[s] += 1.0;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub policy_id: String,
    pub regret_uniform: f64,
    pub regret_onpolicy: f64,
    pub n_rollouts: usize,
    pub epsilon: f64,
    pub distribution: StateDistribution,
}

/// Both regret figures of the epsilon-greedy policy over `q`, measured
/// against the optimal actions of `oracle`.
#[allow(clippy::too_many_arguments)]
pub fn report(
    policy_id: &str,
    env: &GridSpec,
    q: &QTable,
    oracle: &QTable,
    epsilon: f64,
    n_rollouts: usize,
    max_steps: usize,
    seed: u64,
) -> Result<RegretReport> {
    if q.n_states() != env.n_states() || oracle.n_states() != env.n_states() {
        return Err(Error::Config("Q-tables do not match the environment".into()));
    }
    let optmap = OptimalActionMap::from_oracle(env, oracle);
    let policy = QPolicy {
        q,
        policy: EpsilonGreedy::new(epsilon)?,
    };
    let distribution = estimate_onpolicy_distribution(env, &policy, n_rollouts, max_steps, seed)?;
    Ok(RegretReport {
        policy_id: policy_id.to_string(),
        regret_uniform: regret_uniform(&policy, &optmap)?,
        regret_onpolicy: regret_expected(&policy, &optmap, &distribution)?,
        n_rollouts,
        epsilon,
        distribution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_grid::GridSpec;
    use std::collections::BTreeSet;

    fn unique_map(n_states: usize, action: usize) -> OptimalActionMap {
        OptimalActionMap::new(vec![Some(vec![action]); n_states]).unwrap()
    }

    #[test]
    fn closed_forms() {
        assert_eq!(closed_form_case1(4), 0.75);
        assert_eq!(closed_form_case1(1), 0.0);
        assert_eq!(closed_form_case1(2), 0.5);
        assert!((closed_form_case2(9, 5, 0.1, 4) - 0.375).abs() < 1e-12);
        assert_eq!(closed_form_case2(9, 0, 0.1, 4), closed_form_case1(4));
        assert_eq!(closed_form_case2(9, 9, 0.0, 4), 0.0);
    }

    #[test]
    fn uniform_policy_regret() {
        let map = unique_map(9, 0);
        let r = regret_uniform(&UniformPolicy { n_actions: 4 }, &map).unwrap();
        assert!((r - 0.75).abs() < 1e-15);
    }

    #[test]
    fn greedy_correct_policy_has_no_regret() {
        let mut q = QTable::zeros(3, 4);
        for s in 0..3 {
            q.set(s, 1, 1.0);
        }
        let policy = QPolicy {
            q: &q,
            policy: EpsilonGreedy::new(0.0).unwrap(),
        };
        assert_eq!(regret_uniform(&policy, &unique_map(3, 1)).unwrap(), 0.0);
        let random = QPolicy {
            q: &q,
            policy: EpsilonGreedy::new(1.0).unwrap(),
        };
        assert!((regret_uniform(&random, &unique_map(3, 1)).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn concentrated_distributions() {
        let mut q = QTable::zeros(2, 4);
        q.set(0, 2, 0.5);
        let policy = QPolicy {
            q: &q,
            policy: EpsilonGreedy::new(0.1).unwrap(),
        };
        let map = unique_map(2, 2);
        let on_demo = StateDistribution::new(vec![1.0, 0.0]).unwrap();
        let off_demo = StateDistribution::new(vec![0.0, 1.0]).unwrap();
        assert!((regret_expected(&policy, &map, &on_demo).unwrap() - 0.075).abs() < 1e-15);
        assert!((regret_expected(&policy, &map, &off_demo).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn uniform_distribution_reduces_exactly() {
        let mut q = QTable::zeros(5, 4);
        q.set(1, 3, 0.2);
        q.set(3, 0, 0.9);
        q.set(3, 1, 0.9);
        let policy = QPolicy {
            q: &q,
            policy: EpsilonGreedy::new(0.3).unwrap(),
        };
        let map = OptimalActionMap::new(vec![Some(vec![0]), Some(vec![3]), None, Some(vec![0, 1]), Some(vec![2])]).unwrap();
        let a = regret_uniform(&policy, &map).unwrap();
        let b = regret_expected(&policy, &map, &StateDistribution::uniform(5)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            OptimalActionMap::new(vec![Some(vec![0]), Some(vec![])]),
            Err(Error::EmptyOptimalSet(1))
        ));
        assert!(StateDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(StateDistribution::new(vec![-0.5, 1.5]).is_err());
        let policy = UniformPolicy { n_actions: 4 };
        let bad = StateDistribution { mass: vec![0.4, 0.4] };
        assert!(regret_expected(&policy, &unique_map(2, 0), &bad).is_err());
    }

    #[test]
    fn greedy_corridor_visits_only_the_path() {
        // 1x6 corridor, goal at the far end.
        let env = GridSpec::new(6, 1, 0, 5, BTreeSet::new(), false, 20).unwrap();
        let mut q = QTable::zeros(6, 4);
        for s in 0..5 {
            q.set(s, GridAction::Right.index(), 0.5);
        }
        let policy = QPolicy {
            q: &q,
            policy: EpsilonGreedy::new(0.0).unwrap(),
        };
        let d = estimate_onpolicy_distribution(&env, &policy, 50, 20, 3).unwrap();
        assert!(d.mass().iter().all(|&m| (m - 1.0 / 6.0).abs() < 1e-12));

        let env = GridSpec::new(6, 2, 0, 5, BTreeSet::new(), false, 20).unwrap();
        let mut q = QTable::zeros(12, 4);
        for s in 0..5 {
            q.set(s, GridAction::Right.index(), 0.5);
        }
        let policy = QPolicy {
            q: &q,
            policy: EpsilonGreedy::new(0.0).unwrap(),
        };
        let d = estimate_onpolicy_distribution(&env, &policy, 50, 20, 3).unwrap();
        assert!(d.mass()[6..].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn distribution_estimate_is_seeded() {
        let env = GridSpec::new(3, 3, 0, 8, BTreeSet::new(), true, 100).unwrap();
        let p = UniformPolicy { n_actions: 4 };
        let a = estimate_onpolicy_distribution(&env, &p, 20, 100, 9).unwrap();
        let b = estimate_onpolicy_distribution(&env, &p, 20, 100, 9).unwrap();
        assert_eq!(a, b);
        assert!(estimate_onpolicy_distribution(&env, &p, 0, 100, 9).is_err());
    }

    #[test]
    fn sampling_matches_closed_form() {
        let mut q = QTable::zeros(1, 4);
        q.set(0, 1, 1.0);
        q.set(0, 2, 1.0);
        let p = QPolicy {
            q: &q,
            policy: EpsilonGreedy::new(0.2).unwrap(),
        };
        // Same probabilities, default inverse-CDF sampler.
        struct ByProbs<'a>(QPolicy<'a>);
        impl TabularPolicy for ByProbs<'_> {
            fn n_actions(&self) -> usize {
                4
            }
            fn action_probs(&self, state: usize) -> Vec<f64> {
                self.0.action_probs(state)
            }
        }
        let probs = p.action_probs(0);
        let n = 40_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut by_select = [0usize; 4];
        let mut by_cdf = [0usize; 4];
        for _ in 0..n {
            by_select[p.sample(0, &mut rng)] += 1;
            by_cdf[ByProbs(p).sample(0, &mut rng)] += 1;
        }
        for counts in [by_select, by_cdf] {
            for a in 0..4 {
                let freq = counts[a] as f64 / n as f64;
                let se = (probs[a] * (1.0 - probs[a]) / n as f64).sqrt();
                assert!((freq - probs[a]).abs() < 4.0 * se, "action {a}: {freq} vs {}", probs[a]);
            }
        }
    }
}
