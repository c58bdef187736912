//! Value-network agents: the dual-buffer demonstration learner and the two
//! baselines it is compared against.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::head::CategoricalHead;
use super::net::{Activation, LossBatch, ValueNet};
use super::optim::{Adam, AdamConfig};
use super::replay::{DemoBuffer, DemoSample, ReplayBuffer, Transition};
use crate::demos::{demo_targets, DemoSet};
use crate::env::{Environment, Episode};
use crate::error::{Error, Result};

/// Evaluation episodes draw start states from their own stream so that
/// evaluating never perturbs training.
const EVAL_STREAM: u64 = 0x5eed_e7a1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentMode {
    /// Separate online (TD) and demonstration (Monte-Carlo) updates.
    Soda,
    /// No demonstrations.
    Cold,
    /// One TD update per step on a batch mixing demo and online transitions.
    Mixed,
}

impl AgentMode {
    pub fn name(self) -> &'static str {
        match self {
            AgentMode::Soda => "soda",
            AgentMode::Cold => "cold",
            AgentMode::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SodaConfig {
    pub total_steps: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Length of the linear epsilon decay; unset means 20% of `total_steps`.
    pub epsilon_decay_steps: Option<usize>,
    /// Samples drawn from each buffer per update.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Gradient steps between hard copies into the target network.
    pub target_sync: usize,
    pub grad_steps_per_env_step: usize,
    pub n_bins: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub online_capacity: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Demonstration share of each mixed-baseline batch.
    pub demo_fraction: f64,
    pub seed: u64,
}

impl Default for SodaConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            total_steps: 20_000,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: None,
            batch_size: 64,
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            target_sync: 500,
            grad_steps_per_env_step: 1,
            n_bins: 51,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            online_capacity: 100_000,
            eval_interval: 1000,
            eval_episodes: 20,
            demo_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SodaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.total_steps == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return bad("total_steps, batch_size and target_sync must be positive".into());
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval and eval_episodes must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        for (name, eps) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&eps) {
                return bad(format!("{name} {eps} outside [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.demo_fraction) {
            return bad(format!("demo_fraction {} outside [0, 1]", self.demo_fraction));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive".into());
        }
        CategoricalHead::new(self.n_bins)?;
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        ReplayBuffer::<()>::new(self.online_capacity)?;
        Ok(())
    }

    pub fn epsilon_at(&self, step: usize) -> f64 {
        let decay = self.epsilon_decay_steps.unwrap_or(self.total_steps / 5);
        if decay == 0 {
            return self.epsilon_end;
        }
        let frac = (step as f64 / decay as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    /// SHA-256 of the canonical JSON form; stored in checkpoints.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).into()
    }
}

/// Online network, target network and optimiser state.
#[derive(Debug, Clone)]
pub struct SodaAgent {
    net: ValueNet,
    target: ValueNet,
    head: CategoricalHead,
    adam: Adam,
    gamma: f64,
    target_sync: usize,
    grad_steps: u64,
}

fn stack<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let n = rows.len();
    let mut out = Array2::zeros((n, width));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&ndarray::ArrayView1::from(src));
    }
    out
}

impl SodaAgent {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, n_actions: usize, config: &SodaConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let net = ValueNet::new(input_dim, &config.hidden, n_actions, config.n_bins, config.activation, rng)?;
        Ok(Self::from_net(net, config))
    }

    pub fn from_net(net: ValueNet, config: &SodaConfig) -> Self {
        let head = CategoricalHead::new(net.n_bins()).expect("network has at least two bins");
        Self {
            target: net.clone(),
            adam: Adam::new(config.adam(), net.n_params()),
            net,
            head,
            gamma: config.gamma,
            target_sync: config.target_sync,
            grad_steps: 0,
        }
    }

    pub fn net(&self) -> &ValueNet {
        &self.net
    }

    pub fn target_net(&self) -> &ValueNet {
        &self.target
    }

    pub fn head(&self) -> &CategoricalHead {
        &self.head
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn into_net(self) -> ValueNet {
        self.net
    }

    pub fn greedy_action(&self, features: &[f64]) -> Result<usize> {
        self.net.greedy_action(&self.head, features)
    }

    /// Projected bootstrap targets `r + gamma * (1 - terminal) * max_a' Q_target(s', a')`,
    /// clamped to the value range.
    pub fn td_targets(&self, batch: &[&Transition]) -> Array2<f64> {
        let width = self.net.input_dim();
        let next = stack(batch.iter().map(|t| t.next_state.as_slice()), width);
        let logits = self.target.forward_batch(next.view());
        let nb = self.head.n_bins();
        let mut targets = Array2::zeros((batch.len(), nb));
        for (i, t) in batch.iter().enumerate() {
            let bootstrap = if t.terminal {
                0.0
            } else {
                let row = logits.row(i);
                let row = row.as_slice().expect("contiguous logits");
                row.chunks(nb).map(|c| self.head.q_value(c)).fold(f64::NEG_INFINITY, f64::max)
            };
            let y = t.reward + self.gamma * bootstrap;
            let mut out = targets.row_mut(i);
            self.head.project_into(y, out.as_slice_mut().expect("contiguous targets"));
        }
        targets
    }

    fn gradient_step(&mut self, states: Array2<f64>, actions: &[usize], targets: Array2<f64>, what: &str) -> Result<f64> {
        let batch = LossBatch {
            states: states.view(),
            actions,
            targets: targets.view(),
            weight: 1.0,
        };
        let (loss, grads) = self.net.backprop(&batch)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::TrainingFault(format!(
                "non-finite {what} loss {loss} at gradient step {}; parameter norm {:.6e}, gradient finite: {}",
                self.grad_steps,
                self.net.param_norm(),
                grads.is_finite()
            )));
        }
        self.adam.step(&mut self.net, &grads);
        self.grad_steps += 1;
        if self.grad_steps % self.target_sync as u64 == 0 {
            self.target = self.net.clone();
        }
        Ok(loss)
    }

    /// One step on online transitions with bootstrapped targets, then one on
    /// demonstration pairs with their Monte-Carlo returns. Returns the
    /// `(online, demo)` losses.
    pub fn soda_update(&mut self, online: &[&Transition], demo: &[&DemoSample]) -> Result<(f64, f64)> {
        let width = self.net.input_dim();
        let targets = self.td_targets(online);
        let states = stack(online.iter().map(|t| t.state.as_slice()), width);
        let actions: Vec<usize> = online.iter().map(|t| t.action).collect();
        let loss_online = self.gradient_step(states, &actions, targets, "online")?;

        let nb = self.head.n_bins();
        let mut targets = Array2::zeros((demo.len(), nb));
        for (mut row, d) in targets.rows_mut().into_iter().zip(demo) {
            self.head.project_into(d.target, row.as_slice_mut().expect("contiguous targets"));
        }
        let states = stack(demo.iter().map(|d| d.state.as_slice()), width);
        let actions: Vec<usize> = demo.iter().map(|d| d.action).collect();
        let loss_demo = self.gradient_step(states, &actions, targets, "demo")?;
        Ok((loss_online, loss_demo))
    }

    /// Single bootstrapped step on an arbitrary transition batch.
    pub fn td_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        let targets = self.td_targets(batch);
        let states = stack(batch.iter().map(|t| t.state.as_slice()), self.net.input_dim());
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        self.gradient_step(states, &actions, targets, "mixed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SodaRecord {
    /// Environment steps taken when the episode ended.
    pub step: usize,
    pub episode: usize,
    pub ret: f64,
    pub success: bool,
    /// Most recent evaluation result at the time the episode ended.
    pub eval_success: Option<f64>,
    /// Mean losses over the episode's gradient steps.
    pub loss_online: Option<f64>,
    pub loss_demo: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone)]
pub struct SodaRun {
    pub seed: u64,
    pub mode: AgentMode,
    pub records: Vec<SodaRecord>,
    pub evals: Vec<EvalPoint>,
    pub net: ValueNet,
}

impl SodaRun {
    /// Mean of the last three evaluations.
    pub fn final_success(&self) -> f64 {
        let tail = &self.evals[self.evals.len().saturating_sub(3)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|e| e.success_rate).sum::<f64>() / tail.len() as f64
    }

    pub fn max_success(&self) -> f64 {
        self.evals.iter().map(|e| e.success_rate).fold(0.0, f64::max)
    }

    /// Environment steps at the first evaluation reaching `threshold`.
    pub fn steps_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.evals.iter().find(|e| e.success_rate >= threshold).map(|e| e.step)
    }

    /// Mean evaluation success over the run.
    pub fn area_under_curve(&self) -> f64 {
        if self.evals.is_empty() {
            return 0.0;
        }
        self.evals.iter().map(|e| e.success_rate).sum::<f64>() / self.evals.len() as f64
    }

    /// CSV with columns `seed,step,episode,return,success,eval_success,loss_online,loss_demo`.
    pub fn to_csv(&self) -> Result<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "seed",
            "step",
            "episode",
            "return",
            "success",
            "eval_success",
            "loss_online",
            "loss_demo",
        ])?;
        for r in &self.records {
            w.write_record([
                self.seed.to_string(),
                r.step.to_string(),
                r.episode.to_string(),
                r.ret.to_string(),
                (r.success as u8).to_string(),
                opt(r.eval_success),
                opt(r.loss_online),
                opt(r.loss_demo),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Greedy success rate over `episodes` episodes whose start states depend only
/// on `seed`.
pub fn evaluate<E: Environment>(
    env: &E,
    net: &ValueNet,
    head: &CategoricalHead,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM);
    let mut wins = 0usize;
    for _ in 0..episodes {
        let mut ep = Episode::new(env, &mut rng);
        while !ep.is_done() {
            let action = net.greedy_action(head, &env.features(ep.state()))?;
            let out = ep.step(action)?;
            if out.terminal && env.is_goal(&out.next_state) {
                wins += 1;
            }
        }
    }
    Ok(wins as f64 / episodes as f64)
}

fn check_demos<E: Environment>(env: &E, demos: &DemoSet) -> Result<()> {
    if demos.env_id() != env.id() {
        return Err(Error::DemoData(format!(
            "demos recorded on {:?}, training on {:?}",
            demos.env_id(),
            env.id()
        )));
    }
    Ok(())
}

/// Demonstration pairs in network-feature space with targets `gamma^(T - t)`.
pub fn demo_samples<E: Environment>(env: &E, demos: &DemoSet, gamma: f64) -> Result<Vec<DemoSample>> {
    check_demos(env, demos)?;
    demo_targets(demos, gamma)?
        .into_iter()
        .map(|t| {
            Ok(DemoSample {
                state: env.features(&env.decode(&t.state)?),
                action: t.action,
                target: t.target,
            })
        })
        .collect()
}

/// Demonstrations replayed as ordinary transitions with their instantaneous
/// rewards.
pub fn demo_transitions<E: Environment>(env: &E, demos: &DemoSet) -> Result<Vec<Transition>> {
    check_demos(env, demos)?;
    let mut out = Vec::with_capacity(demos.total_steps());
    for traj in demos.trajectories() {
        for (raw, action, raw_next) in traj.transitions() {
            let state = env.decode(raw)?;
            let next = env.decode(raw_next)?;
            let outcome = env.transition(&state, action)?;
            out.push(Transition {
                state: env.features(&state),
                action,
                reward: outcome.reward,
                next_state: env.features(&next),
                terminal: outcome.terminal,
            });
        }
    }
    Ok(out)
}

enum Feed {
    Soda(DemoBuffer<DemoSample>),
    Mixed(Option<DemoBuffer<Transition>>, f64),
}

pub fn train_soda<E: Environment>(env: &E, demos: &DemoSet, config: &SodaConfig) -> Result<SodaRun> {
    config.validate()?;
    let buffer = DemoBuffer::new(demo_samples(env, demos, config.gamma)?)?;
    run(env, Feed::Soda(buffer), AgentMode::Soda, config)
}

pub fn train_cold<E: Environment>(env: &E, config: &SodaConfig) -> Result<SodaRun> {
    run(env, Feed::Mixed(None, 0.0), AgentMode::Cold, config)
}

/// Single update stream on batches of `2 * batch_size` transitions, a
/// `demo_fraction` share of them drawn from the demonstrations.
pub fn train_mixed_baseline<E: Environment>(env: &E, demos: &DemoSet, config: &SodaConfig) -> Result<SodaRun> {
    config.validate()?;
    let buffer = DemoBuffer::new(demo_transitions(env, demos)?)?;
    run(env, Feed::Mixed(Some(buffer), config.demo_fraction), AgentMode::Mixed, config)
}

#[derive(Default)]
struct LossSums {
    online: f64,
    demo: f64,
    n: usize,
}

impl LossSums {
    fn means(&self, has_demo: bool) -> (Option<f64>, Option<f64>) {
        if self.n == 0 {
            return (None, None);
        }
        let n = self.n as f64;
        (Some(self.online / n), has_demo.then(|| self.demo / n))
    }
}

fn run<E: Environment>(env: &E, feed: Feed, mode: AgentMode, config: &SodaConfig) -> Result<SodaRun> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = SodaAgent::new(env.feature_dim(), env.n_actions(), config, &mut rng)?;
    let mut online: ReplayBuffer<Transition> = ReplayBuffer::new(config.online_capacity)?;
    let batch = config.batch_size;

    let mut records = Vec::new();
    let mut evals = Vec::new();
    let mut last_eval = None;
    let mut episode = Episode::new(env, &mut rng);
    let mut features = env.features(episode.state());
    let mut ep_return = 0.0;
    let mut ep_success = false;
    let mut losses = LossSums::default();

    for step in 0..config.total_steps {
        let explore = rng.random::<f64>() < config.epsilon_at(step);
        let action = if explore {
            rng.random_range(0..env.n_actions())
        } else {
            agent.greedy_action(&features)?
        };
        let out = episode.step(action)?;
        let next_features = env.features(&out.next_state);
        ep_return += out.reward;
        ep_success |= out.terminal && env.is_goal(&out.next_state);
        online.push(Transition {
            state: std::mem::replace(&mut features, next_features.clone()),
            action,
            reward: out.reward,
            next_state: next_features,
            terminal: out.terminal,
        });

        if online.len() >= batch {
            for _ in 0..config.grad_steps_per_env_step {
                match &feed {
                    Feed::Soda(demo) => {
                        let oi = online.sample_indices(batch, &mut rng);
                        let di = demo.sample_indices(batch, &mut rng);
                        let ob: Vec<&Transition> = oi.iter().map(|&i| online.get(i)).collect();
                        let db: Vec<&DemoSample> = di.iter().map(|&i| demo.get(i)).collect();
                        let (lo, ld) = agent.soda_update(&ob, &db)?;
                        losses.online += lo;
                        losses.demo += ld;
                    }
                    Feed::Mixed(demo, fraction) => {
                        let total = 2 * batch;
                        let n_demo = match demo {
                            Some(_) => (total as f64 * fraction).round() as usize,
                            None => 0,
                        };
                        let mut mixed: Vec<&Transition> = Vec::with_capacity(total);
                        if let Some(demo) = demo.as_ref().filter(|_| n_demo > 0) {
                            mixed.extend(demo.sample_indices(n_demo, &mut rng).into_iter().map(|i| demo.get(i)));
                        }
                        let oi = online.sample_indices(total - n_demo, &mut rng);
                        mixed.extend(oi.into_iter().map(|i| online.get(i)));
                        losses.online += agent.td_update(&mixed)?;
                    }
                }
                losses.n += 1;
            }
        }

        if (step + 1) % config.eval_interval == 0 {
            let rate = evaluate(env, agent.net(), agent.head(), config.eval_episodes, config.seed)?;
            evals.push(EvalPoint {
                step: step + 1,
                success_rate: rate,
            });
            last_eval = Some(rate);
        }

        if episode.is_done() {
            let (loss_online, loss_demo) = losses.means(mode == AgentMode::Soda);
            records.push(SodaRecord {
                step: step + 1,
                episode: records.len(),
                ret: ep_return,
                success: ep_success,
                eval_success: last_eval,
                loss_online,
                loss_demo,
            });
            episode = Episode::new(env, &mut rng);
            features = env.features(episode.state());
            ep_return = 0.0;
            ep_success = false;
            losses = LossSums::default();
        }
    }

    Ok(SodaRun {
        seed: config.seed,
        mode,
        records,
        evals,
        net: agent.into_net(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule_defaults_to_first_fifth() {
        let cfg = SodaConfig {
            total_steps: 1000,
            ..SodaConfig::default()
        };
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert!((cfg.epsilon_at(100) - 0.525).abs() < 1e-12);
        assert!((cfg.epsilon_at(200) - 0.05).abs() < 1e-12);
        assert!((cfg.epsilon_at(900) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SodaConfig::default().validate().is_ok());
        let bad = [
            SodaConfig { gamma: 0.0, ..SodaConfig::default() },
            SodaConfig { batch_size: 0, ..SodaConfig::default() },
            SodaConfig { n_bins: 1, ..SodaConfig::default() },
            SodaConfig { demo_fraction: 1.5, ..SodaConfig::default() },
            SodaConfig { hidden: vec![64, 0], ..SodaConfig::default() },
            SodaConfig { learning_rate: f64::NAN, ..SodaConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn digest_tracks_config() {
        let a = SodaConfig::default();
        let b = SodaConfig { seed: 1, ..SodaConfig::default() };
        assert_eq!(a.digest(), SodaConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
