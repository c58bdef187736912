use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soda::approx::{
    Activation, AgentMode, CategoricalHead, DemoSample, LossBatch, SodaAgent, SodaConfig, Transition, ValueNet,
};

fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, n_actions: usize, n_bins: usize) -> (Array2<f64>, Vec<usize>, Array2<f64>) {
    let states = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
    let actions = (0..n).map(|_| rng.random_range(0..n_actions)).collect();
    let mut targets = Array2::zeros((n, n_bins));
    for mut row in targets.rows_mut() {
        let raw: Vec<f64> = (0..n_bins).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        for (t, r) in row.iter_mut().zip(raw) {
            *t = r / total;
        }
    }
    (states, actions, targets)
}

/// Central differences on every parameter, compared with relative error
/// `|a - n| / max(|a|, |n|, 1e-5)`; the floor absorbs
/// roundoff on near-zero gradients.
fn max_gradient_error(net: &ValueNet, batch: &LossBatch, step: f64) -> f64 {
    let (_, grads) = net.backprop(batch).unwrap();
    let analytic = grads.to_flat();
    let base = net.to_flat();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + step;
        probe.set_flat(&p).unwrap();
        let up = probe.loss(batch).unwrap();
        p[i] = base[i] - step;
        probe.set_flat(&p).unwrap();
        let down = probe.loss(batch).unwrap();
        let numeric = (up - down) / (2.0 * step);
        let scale = a.abs().max(numeric.abs()).max(1e-5);
        let rel = (a - numeric).abs() / scale;
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for trial in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let act = if trial % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let net = ValueNet::new(3, &[6, 5], 4, 7, act, &mut rng).unwrap();
        let (s, a, t) = random_batch(&mut rng, 5, 3, 4, 7);
        let batch = LossBatch { states: s.view(), actions: &a, targets: t.view(), weight: 1.0 };
        let err = max_gradient_error(&net, &batch, 1e-5);
        assert!(err < 1e-4, "trial {trial} ({act:?}): relative error {err}");
    }
}

#[test]
fn gradients_match_finite_differences_at_default_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = ValueNet::new(4, &[64, 64], 5, 51, Activation::Tanh, &mut rng).unwrap();
    let (s, a, t) = random_batch(&mut rng, 3, 4, 5, 51);
    let batch = LossBatch { states: s.view(), actions: &a, targets: t.view(), weight: 1.0 };
    let err = max_gradient_error(&net, &batch, 1e-5);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn doubling_the_loss_doubles_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = ValueNet::new(2, &[8], 3, 5, Activation::Relu, &mut rng).unwrap();
    let (s, a, t) = random_batch(&mut rng, 4, 2, 3, 5);
    let one = LossBatch { states: s.view(), actions: &a, targets: t.view(), weight: 1.0 };
    let two = LossBatch { weight: 2.0, ..one };
    let (l1, g1) = net.backprop(&one).unwrap();
    let (l2, g2) = net.backprop(&two).unwrap();
    assert!((l2 - 2.0 * l1).abs() < 1e-12);
    for (x, y) in g1.iter().zip(g2.iter()) {
        assert!((2.0 * x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
}

#[test]
fn zero_gradient_at_loss_minimum() {
    // Zero weights give uniform bins; a uniform target is then already optimal.
    let net = ValueNet::zeros(2, &[4], 2, 5, Activation::Relu).unwrap();
    let s = Array2::from_shape_vec((2, 2), vec![0.1, 0.2, 0.7, 0.4]).unwrap();
    let t = Array2::from_elem((2, 5), 0.2);
    let batch = LossBatch { states: s.view(), actions: &[0, 1], targets: t.view(), weight: 1.0 };
    let (loss, grads) = net.backprop(&batch).unwrap();
    assert!((loss - 5f64.ln()).abs() < 1e-12);
    assert!(grads.iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn zero_weight_net_gives_uniform_bins() {
    let net = ValueNet::zeros(4, &[64, 64], 5, 51, Activation::Relu).unwrap();
    let head = CategoricalHead::new(51).unwrap();
    let logits = net.forward(&[0.3, -0.2, 0.9, 0.1]).unwrap();
    assert!(logits.iter().all(|&z| z == 0.0));
    for q in net.q_values(&head, &[0.3, -0.2, 0.9, 0.1]).unwrap() {
        assert!((q - 0.5).abs() < 1e-12);
    }
}

#[test]
fn forward_is_deterministic_and_batch_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = ValueNet::new(4, &[16, 16], 5, 11, Activation::Relu, &mut rng).unwrap();
    let xs = Array2::from_shape_fn((6, 4), |_| rng.random_range(0.0..1.0));
    let batch = net.forward_batch(xs.view());
    for (i, row) in xs.rows().into_iter().enumerate() {
        let single = net.forward(row.as_slice().unwrap()).unwrap();
        assert_eq!(single, net.forward(row.as_slice().unwrap()).unwrap());
        for (a, b) in batch.row(i).iter().zip(&single) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

fn agent(lr: f64) -> SodaAgent {
    let cfg = SodaConfig { learning_rate: lr, hidden: vec![8, 8], n_bins: 11, ..SodaConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    SodaAgent::new(2, 3, &cfg, &mut rng).unwrap()
}

#[test]
fn terminal_success_targets_the_top_bin() {
    let a = agent(1e-3);
    let t = Transition { state: vec![0.1, 0.2], action: 1, reward: 1.0, next_state: vec![0.5, 0.5], terminal: true };
    let targets = a.td_targets(&[&t]);
    assert_eq!(targets.row(0).to_vec(), a.head().project_target(1.0));
    let mid = Transition { reward: 0.0, terminal: false, ..t };
    let targets = a.td_targets(&[&mid]);
    let y: f64 = targets.row(0).iter().zip(a.head().centers()).map(|(p, c)| p * c).sum();
    assert!((0.0..=0.99).contains(&y));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut a = agent(0.0);
    let before = a.net().to_flat();
    let t = Transition { state: vec![0.1, 0.2], action: 0, reward: 0.0, next_state: vec![0.2, 0.2], terminal: false };
    let d = DemoSample { state: vec![0.3, 0.3], action: 2, target: 0.9 };
    let (lo, ld) = a.soda_update(&[&t, &t], &[&d]).unwrap();
    assert!(lo.is_finite() && ld.is_finite());
    assert_eq!(a.net().to_flat(), before);
    assert_eq!(a.grad_steps(), 2);
}

fn loss_at(net: &ValueNet, s: ArrayView2<f64>, a: &[usize], t: ArrayView2<f64>) -> f64 {
    net.loss(&LossBatch { states: s, actions: a, targets: t, weight: 1.0 }).unwrap()
}

#[test]
fn fitted_demo_targets_have_entropy_loss_and_flat_gradient() {
    // Train one state-action pair to its projected target, then check the
    // loss equals the target entropy and the gradient vanishes.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let head = CategoricalHead::new(5).unwrap();
    let target = head.project_target(0.6);
    let entropy: f64 = target.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
    let cfg = SodaConfig { learning_rate: 0.05, n_bins: 5, hidden: vec![6], ..SodaConfig::default() };
    let net = ValueNet::new(2, &[6], 2, 5, Activation::Tanh, &mut rng).unwrap();
    let mut a = SodaAgent::from_net(net, &cfg);
    let d = DemoSample { state: vec![0.4, 0.6], action: 1, target: 0.6 };
    let t = Transition { state: vec![0.4, 0.6], action: 0, reward: 0.0, next_state: vec![0.4, 0.6], terminal: true };
    for _ in 0..4000 {
        a.soda_update(&[&t], &[&d]).unwrap();
    }
    let s = Array2::from_shape_vec((1, 2), vec![0.4, 0.6]).unwrap();
    let tv = Array2::from_shape_vec((1, 5), target).unwrap();
    let loss = loss_at(a.net(), s.view(), &[1], tv.view());
    assert!((loss - entropy).abs() < 1e-3, "loss {loss}, entropy {entropy}");
    let (_, grads) = a.net().backprop(&LossBatch { states: s.view(), actions: &[1], targets: tv.view(), weight: 1.0 }).unwrap();
    assert!(grads.iter().all(|g| g.abs() < 1e-2));
}

#[test]
fn mode_names() {
    assert_eq!(AgentMode::Soda.name(), "soda");
    assert_eq!(AgentMode::Mixed.name(), "mixed");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn q_values_stay_in_unit_interval(seed in 0u64..1000, x in prop::array::uniform4(-50.0f64..50.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = ValueNet::new(4, &[8, 8], 5, 51, Activation::Relu, &mut rng).unwrap();
        // Exaggerate the weights to push logits to extremes.
        for p in net.params_mut() {
            *p *= 20.0;
        }
        let head = CategoricalHead::new(51).unwrap();
        for q in net.q_values(&head, &x).unwrap() {
            prop_assert!((0.0..=1.0).contains(&q));
        }
    }
}
