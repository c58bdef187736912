use std::collections::BTreeSet;

use soda::env_grid::{Difficulty, GridSpec};
use soda::regret::{
    closed_form_case1, closed_form_case2, estimate_onpolicy_distribution, regret_expected, regret_uniform,
    state_regret, OptimalActionMap, QPolicy, StateDistribution, TabularMdp, TabularPolicy, UniformPolicy,
};
use soda::tabular::{train_oracle, EpsilonGreedy, OracleConfig, QTable};

/// Expected per-step visit counts, propagated exactly: mass that reaches a
/// terminal state is counted once and then leaves.
fn exact_occupancy<M: TabularMdp, P: TabularPolicy>(env: &M, policy: &P, max_steps: usize) -> StateDistribution {
    let n = env.n_states();
    let mut live = vec![0.0; n];
    live[env.start()] = 1.0;
    let mut counts = live.clone();
    for _ in 0..max_steps {
        let mut next = vec![0.0; n];
        for (s, &m) in live.iter().enumerate() {
            if m == 0.0 || env.is_terminal(s) {
                continue;
            }
            for (a, p) in policy.action_probs(s).iter().enumerate() {
                next[env.next(s, a)] += m * p;
            }
        }
        for (c, m) in counts.iter_mut().zip(&next) {
            *c += m;
        }
        live = next;
    }
    StateDistribution::from_counts(&counts).unwrap()
}

/// Ring of `n` states: action 0 steps forward, action 1 stays, and the last
/// state is absorbing.
struct Ring {
    n: usize,
}

impl TabularMdp for Ring {
    fn n_states(&self) -> usize {
        self.n
    }
    fn start(&self) -> usize {
        0
    }
    fn is_terminal(&self, state: usize) -> bool {
        state == self.n - 1
    }
    fn next(&self, state: usize, action: usize) -> usize {
        if action == 0 { state + 1 } else { state }
    }
}

#[test]
fn sampled_occupancy_matches_exact_on_wrapped_grid() {
    let spec = GridSpec::new(3, 3, 0, 8, BTreeSet::new(), true, 100).unwrap();
    let policy = UniformPolicy { n_actions: 4 };
    let exact = exact_occupancy(&spec, &policy, 100);
    let sampled = estimate_onpolicy_distribution(&spec, &policy, 20_000, 100, 7).unwrap();
    let tv = exact.total_variation(&sampled);
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn sampled_occupancy_matches_exact_for_epsilon_greedy_on_medium() {
    let spec = GridSpec::preset(Difficulty::Medium);
    let oracle = train_oracle(&spec, &OracleConfig::default()).unwrap();
    let policy = QPolicy { q: &oracle, policy: EpsilonGreedy::new(0.1).unwrap() };
    let exact = exact_occupancy(&spec, &policy, 100);
    let sampled = estimate_onpolicy_distribution(&spec, &policy, 20_000, 100, 3).unwrap();
    assert!(exact.total_variation(&sampled) < 0.02);
}

#[test]
fn ring_occupancy_has_geometric_dwell_times() {
    // With p(stay) = 1/2 each non-terminal state is visited twice on average
    // when the horizon is long enough.
    let ring = Ring { n: 4 };
    let policy = UniformPolicy { n_actions: 2 };
    let exact = exact_occupancy(&ring, &policy, 400);
    for m in &exact.mass()[..3] {
        assert!((m - 2.0 / 7.0).abs() < 1e-9);
    }
    assert!((exact.mass()[3] - 1.0 / 7.0).abs() < 1e-9);
    let sampled = estimate_onpolicy_distribution(&ring, &policy, 20_000, 400, 0).unwrap();
    assert!(exact.total_variation(&sampled) < 0.02);
}

#[test]
fn uniform_regret_matches_closed_form_for_unique_optima() {
    for n_actions in 2..6 {
        let sets: Vec<Option<Vec<usize>>> = (0..10).map(|s| Some(vec![s % n_actions])).collect();
        let optmap = OptimalActionMap::new(sets).unwrap();
        let r = regret_uniform(&UniformPolicy { n_actions }, &optmap).unwrap();
        assert!((r - closed_form_case1(n_actions)).abs() < 1e-12);
    }
}

#[test]
fn partially_demonstrated_table_matches_closed_form() {
    let (n_states, n_demo, eps, n_actions) = (9, 5, 0.1, 4);
    let sets: Vec<Option<Vec<usize>>> = (0..n_states).map(|_| Some(vec![2])).collect();
    let optmap = OptimalActionMap::new(sets).unwrap();
    let mut q = QTable::zeros(n_states, n_actions);
    for s in 0..n_demo {
        q.set(s, 2, 0.9);
    }
    let policy = QPolicy { q: &q, policy: EpsilonGreedy::new(eps).unwrap() };
    let r = regret_uniform(&policy, &optmap).unwrap();
    assert!((r - closed_form_case2(n_states, n_demo, eps, n_actions)).abs() < 1e-12);
    assert!((r - 0.375).abs() < 1e-12);
}

#[test]
fn weighted_regret_is_mass_weighted_state_regret() {
    let spec = GridSpec::preset(Difficulty::Easy);
    let oracle = train_oracle(&spec, &OracleConfig::default()).unwrap();
    let optmap = OptimalActionMap::from_oracle(&spec, &oracle);
    let policy = UniformPolicy { n_actions: 4 };
    let d = exact_occupancy(&spec, &policy, 100);
    let brute: f64 = d.mass().iter().enumerate().map(|(s, m)| m * state_regret(&policy, &optmap, s)).sum();
    assert!((regret_expected(&policy, &optmap, &d).unwrap() - brute).abs() < 1e-12);
    // Terminal states carry mass but no regret.
    for s in 0..spec.n_states() {
        if spec.is_terminal(s) {
            assert_eq!(state_regret(&policy, &optmap, s), 0.0);
        }
    }
}
