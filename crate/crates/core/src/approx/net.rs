//! Multilayer perceptron producing one categorical value distribution per
//! action, with hand-written backpropagation.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::head::{log_softmax, softmax, CategoricalHead};
use crate::error::{Error, Result};

/// Initial logit on each action's lowest bin; with 51 bins this puts about
/// 98% of the mass at zero.
const ZERO_BIN_LOGIT: f64 = 8.0;
const OUTPUT_WEIGHT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `grad` by the activation derivative, given the
    /// post-activation values.
    fn backprop(self, grad: &mut Array2<f64>, activated: &Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(activated, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(activated, |g, &a| *g *= 1.0 - a * a),
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    layers: Vec<Dense>,
    activation: Activation,
    n_actions: usize,
    n_bins: usize,
}

/// Per-sample supervision: cross-entropy between `targets[i]` and the
/// distribution of `actions[i]`, averaged over the batch and scaled by
/// `weight`.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    pub states: ArrayView2<'a, f64>,
    pub actions: &'a [usize],
    pub targets: ArrayView2<'a, f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &ValueNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

impl ValueNet {
    /// Uniform fan-in initialisation (`±sqrt(6 / fan_in)` for ReLU,
    /// `±sqrt(3 / fan_in)` for tanh) with zero hidden biases.
    ///
    /// The output layer starts with shrunken weights and a large logit on
    /// the lowest bin, so every action begins with a value near zero, like a
    /// zero-initialised table. A near-uniform head would instead value every
    /// untried action at about one half and outbid the demonstrated ones.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        n_actions: usize,
        n_bins: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(input_dim, hidden, n_actions, n_bins, activation)?;
        let gain = match activation {
            Activation::Relu => 6.0,
            Activation::Tanh => 3.0,
        };
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let mut bound = (gain / layer.weight.nrows() as f64).sqrt();
            if i == last {
                bound *= OUTPUT_WEIGHT_SCALE;
            }
            layer
                .weight
                .mapv_inplace(|_| rng.random_range(-bound..=bound));
        }
        for a in 0..n_actions {
            net.layers[last].bias[a * n_bins] = ZERO_BIN_LOGIT;
        }
        Ok(net)
    }

    pub fn zeros(
        input_dim: usize,
        hidden: &[usize],
        n_actions: usize,
        n_bins: usize,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 || n_actions == 0 || n_bins < 2 || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid network shape: input {input_dim}, hidden {hidden:?}, actions {n_actions}, bins {n_bins}"
            )));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions * n_bins);
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self {
            layers,
            activation,
            n_actions,
            n_bins,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.ncols())
            .collect()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in a fixed order: per layer, weights row-major then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                values.len()
            )));
        }
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    pub fn param_norm(&self) -> f64 {
        self.params().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Raw logits, one row per input, `n_actions * n_bins` columns with the
    /// bins of action `a` at `a * n_bins ..`.
    pub fn forward_batch(&self, states: ArrayView2<f64>) -> Array2<f64> {
        let mut h = states.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                self.activation.apply(&mut z);
            }
            h = z;
        }
        h
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_input(state)?;
        let x = ArrayView2::from_shape((1, state.len()), state).expect("row shape");
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    fn check_input(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                state.len()
            )));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(())
    }

    /// Scalar action values read out through `head`.
    pub fn q_values(&self, head: &CategoricalHead, state: &[f64]) -> Result<Vec<f64>> {
        let logits = self.forward(state)?;
        Ok(logits.chunks(self.n_bins).map(|c| head.q_value(c)).collect())
    }

    /// Greedy action; ties go to the lowest index.
    pub fn greedy_action(&self, head: &CategoricalHead, state: &[f64]) -> Result<usize> {
        let q = self.q_values(head, state)?;
        Ok(argmax(&q))
    }

    pub fn loss(&self, batch: &LossBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let logits = self.forward_batch(batch.states);
        Ok(self.loss_and_output_grad(&logits, batch).0)
    }

    fn check_batch(&self, batch: &LossBatch) -> Result<()> {
        let n = batch.states.nrows();
        if n == 0
            || batch.actions.len() != n
            || batch.targets.nrows() != n
            || batch.targets.ncols() != self.n_bins
            || batch.states.ncols() != self.input_dim()
        {
            return Err(Error::TrainingFault(format!(
                "malformed batch: {} states of width {}, {} actions, targets {:?}",
                n,
                batch.states.ncols(),
                batch.actions.len(),
                batch.targets.dim()
            )));
        }
        if let Some(&a) = batch.actions.iter().find(|&&a| a >= self.n_actions) {
            return Err(Error::TrainingFault(format!("action {a} out of range")));
        }
        Ok(())
    }

    fn loss_and_output_grad(&self, logits: &Array2<f64>, batch: &LossBatch) -> (f64, Array2<f64>) {
        let n = logits.nrows();
        let scale = batch.weight / n as f64;
        let mut grad = Array2::zeros(logits.dim());
        let mut loss = 0.0;
        for (i, &a) in batch.actions.iter().enumerate() {
            let range = a * self.n_bins..(a + 1) * self.n_bins;
            let row = logits.slice(s![i, range.clone()]);
            let z = row.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| row.to_vec());
            let target = batch.targets.row(i);
            let logp = log_softmax(&z);
            let p = softmax(&z);
            let mut g = grad.slice_mut(s![i, range]);
            for k in 0..self.n_bins {
                let t = target[k];
                if t != 0.0 {
                    loss -= t * logp[k];
                }
                g[k] = (p[k] - t) * scale;
            }
        }
        (loss * scale, grad)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn backprop(&self, batch: &LossBatch) -> Result<(f64, Gradients)> {
        self.check_batch(batch)?;
        let last = self.layers.len() - 1;
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        activations.push(batch.states.to_owned());
        let mut logits = Array2::zeros((0, 0));
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                self.activation.apply(&mut z);
                activations.push(z);
            } else {
                logits = z;
            }
        }
        let (loss, mut grad) = self.loss_and_output_grad(&logits, batch);
        let mut grads = Gradients::zeros_like(self);
        for i in (0..self.layers.len()).rev() {
            grads.layers[i].weight = activations[i].t().dot(&grad);
            grads.layers[i].bias = grad.sum_axis(Axis(0));
            if i > 0 {
                let mut upstream = grad.dot(&self.layers[i].weight.t());
                self.activation.backprop(&mut upstream, &activations[i]);
                grad = upstream;
            }
        }
        Ok((loss, grads))
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(act: Activation) -> ValueNet {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        ValueNet::new(2, &[5, 4], 3, 4, act, &mut rng).unwrap()
    }

    #[test]
    fn shapes_and_param_count() {
        let net = small_net(Activation::Relu);
        assert_eq!(net.n_params(), 2 * 5 + 5 + 5 * 4 + 4 + 4 * 12 + 12);
        assert_eq!(net.forward(&[0.1, 0.2]).unwrap().len(), 12);
        assert_eq!(net.hidden(), vec![5, 4]);
        assert!(net.forward(&[0.1]).is_err());
        assert!(matches!(net.forward(&[f64::NAN, 0.0]), Err(Error::NonFiniteState)));
    }

    #[test]
    fn flat_round_trip() {
        let net = small_net(Activation::Tanh);
        let mut other = ValueNet::zeros(2, &[5, 4], 3, 4, Activation::Tanh).unwrap();
        other.set_flat(&net.to_flat()).unwrap();
        assert_eq!(net, other);
        assert!(other.set_flat(&[0.0]).is_err());
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = small_net(Activation::Relu);
        let xs = array![[0.1, 0.9], [0.5, 0.5]];
        let out = net.forward_batch(xs.view());
        for i in 0..2 {
            let single = net.forward(xs.row(i).as_slice().unwrap()).unwrap();
            for (a, b) in out.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_touches_only_taken_action() {
        let net = small_net(Activation::Relu);
        let xs = array![[0.3, 0.7]];
        let targets = array![[0.0, 1.0, 0.0, 0.0]];
        let batch = LossBatch {
            states: xs.view(),
            actions: &[1],
            targets: targets.view(),
            weight: 1.0,
        };
        let (_, grads) = net.backprop(&batch).unwrap();
        let out = &grads.layers[2];
        for a in [0usize, 2] {
            for k in 0..4 {
                assert_eq!(out.bias[a * 4 + k], 0.0);
            }
        }
        assert!((4..8).any(|k| out.bias[k] != 0.0));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }
}
