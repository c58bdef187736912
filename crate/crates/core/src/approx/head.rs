//! Categorical value head over a fixed grid of value bins in `[0, 1]`.

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 51;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoricalHead {
    n_bins: usize,
    v_min: f64,
    v_max: f64,
}

impl CategoricalHead {
    /// Bins evenly spaced over `[0, 1]`, the value range of a sparse 0/1
    /// reward with `gamma <= 1`.
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::Config(format!("need at least 2 value bins, got {n_bins}")));
        }
        Ok(Self {
            n_bins,
            v_min: 0.0,
            v_max: 1.0,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    fn spacing(&self) -> f64 {
        (self.v_max - self.v_min) / (self.n_bins - 1) as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        if i + 1 == self.n_bins {
            self.v_max
        } else {
            self.v_min + i as f64 * self.spacing()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.center(i)).collect()
    }

    pub fn expectation(&self, probs: &[f64]) -> f64 {
        let e: f64 = probs.iter().enumerate().map(|(i, p)| p * self.center(i)).sum();
        e.clamp(self.v_min, self.v_max)
    }

    /// Expected value under `softmax(logits)`.
    pub fn q_value(&self, logits: &[f64]) -> f64 {
        debug_assert_eq!(logits.len(), self.n_bins);
        self.expectation(&softmax(logits))
    }

    /// Two-hot projection: splits unit mass linearly between the two bins
    /// bracketing `v` (after clamping into the value range).
    pub fn project_target(&self, v: f64) -> Vec<f64> {
        let mut probs = vec![0.0; self.n_bins];
        self.project_into(v, &mut probs);
        probs
    }

    pub fn project_into(&self, v: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|p| *p = 0.0);
        let v = if v.is_nan() { self.v_min } else { v.clamp(self.v_min, self.v_max) };
        let pos = (v - self.v_min) / self.spacing();
        let lo = (pos.floor() as usize).min(self.n_bins - 2);
        let upper = pos - lo as f64;
        if upper <= 0.0 {
            out[lo] = 1.0;
        } else if upper >= 1.0 {
            out[lo + 1] = 1.0;
        } else {
            out[lo] = 1.0 - upper;
            out[lo + 1] = upper;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// `-sum_i target_i * log softmax(logits)_i`
pub fn cross_entropy(target: &[f64], logits: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(l, t)| -t * l)
        .sum()
}
