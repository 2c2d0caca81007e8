//! Differentiable objectives with exact analytic gradients.
//!
//! Parameters are flat `f64` vectors; a batch is a list of row indices into
//! the objective's training set. Losses and gradients are batch means.

use std::sync::Arc;

use rand::Rng;

use crate::channel::StreamKey;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};

pub trait Objective: Send + Sync {
    /// Model dimension `d`.
    fn dim(&self) -> usize;

    /// Rows in the training set that batches index into.
    fn num_samples(&self) -> usize;

    fn loss(&self, params: &[f64], batch: &[usize]) -> f64;

    fn stochastic_gradient(&self, params: &[f64], batch: &[usize]) -> Vec<f64>;

    fn full_gradient(&self, params: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.stochastic_gradient(params, &all)
    }

    fn initial_params(&self, key: &StreamKey) -> Vec<f64>;

    /// Fraction of correctly classified rows of `data`, for classifiers.
    fn accuracy(&self, _params: &[f64], _data: &LabeledDataset) -> Option<f64> {
        None
    }

    /// Whether per-round gradient-norm diagnostics over the full training set
    /// are cheap enough to compute exactly.
    fn exact_diagnostics(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveKind {
    /// `0.5 (w - xi)^T diag(a) (w - xi)` per sample, with curvatures `a_j`
    /// spaced linearly over `[min, max]`; starts from the all-ones vector.
    Quadratic { curvature_min: f64, curvature_max: f64 },
    /// Multinomial logistic regression (softmax cross-entropy).
    Logistic,
    /// One tanh hidden layer followed by a softmax output.
    Mlp { hidden: usize },
}

pub fn build_objective(kind: &ObjectiveKind, data: Arc<LabeledDataset>) -> Result<Arc<dyn Objective>> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let p = data.n_features();
    match *kind {
        ObjectiveKind::Quadratic {
            curvature_min,
            curvature_max,
        } => {
            if !(curvature_min > 0.0 && curvature_max >= curvature_min && curvature_max.is_finite()) {
                return Err(Error::invalid(format!(
                    "curvature range [{curvature_min}, {curvature_max}] must be positive and ordered"
                )));
            }
            let curvature = (0..p)
                .map(|j| {
                    let t = if p > 1 { j as f64 / (p - 1) as f64 } else { 0.0 };
                    curvature_min + t * (curvature_max - curvature_min)
                })
                .collect();
            Ok(Arc::new(Quadratic { data, curvature }))
        }
        ObjectiveKind::Logistic => {
            if data.classes() < 2 {
                return Err(Error::invalid("logistic regression needs at least two classes"));
            }
            Ok(Arc::new(Logistic { data }))
        }
        ObjectiveKind::Mlp { hidden } => {
            if data.classes() < 2 || hidden == 0 {
                return Err(Error::invalid("perceptron needs >= 2 classes and >= 1 hidden unit"));
            }
            Ok(Arc::new(Mlp { data, hidden }))
        }
    }
}

pub struct Quadratic {
    data: Arc<LabeledDataset>,
    curvature: Vec<f64>,
}

impl Quadratic {
    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn loss(&self, w: &[f64], batch: &[usize]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|&i| {
                let xi = self.data.row(i);
                (0..w.len()).map(|j| 0.5 * self.curvature[j] * (w[j] - xi[j]).powi(2)).sum::<f64>()
            })
            .sum();
        total / batch.len() as f64
    }

    fn stochastic_gradient(&self, w: &[f64], batch: &[usize]) -> Vec<f64> {
        let mut center = vec![0.0; w.len()];
        for &i in batch {
            for (c, x) in center.iter_mut().zip(self.data.row(i)) {
                *c += x;
            }
        }
        let n = batch.len() as f64;
        (0..w.len()).map(|j| self.curvature[j] * (w[j] - center[j] / n)).collect()
    }

    fn initial_params(&self, _key: &StreamKey) -> Vec<f64> {
        vec![1.0; self.dim()]
    }
}

/// Writes softmax probabilities of `logits` in place and returns
/// `log(sum exp(logits))`.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
    max + sum.ln()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Parameters: weights `W` (`classes x features`, row-major), then biases.
pub struct Logistic {
    data: Arc<LabeledDataset>,
}

impl Logistic {
    fn logits(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let p = x.len();
        let bias = &w[out.len() * p..];
        for (c, z) in out.iter_mut().enumerate() {
            let row = &w[c * p..(c + 1) * p];
            *z = bias[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl Objective for Logistic {
    fn dim(&self) -> usize {
        self.data.classes() * (self.data.n_features() + 1)
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn loss(&self, w: &[f64], batch: &[usize]) -> f64 {
        let mut z = vec![0.0; self.data.classes()];
        let total: f64 = batch
            .iter()
            .map(|&i| {
                self.logits(w, self.data.row(i), &mut z);
                let label_logit = z[self.data.labels()[i]];
                softmax_in_place(&mut z) - label_logit
            })
            .sum();
        total / batch.len() as f64
    }

    fn stochastic_gradient(&self, w: &[f64], batch: &[usize]) -> Vec<f64> {
        let (classes, p) = (self.data.classes(), self.data.n_features());
        let mut grad = vec![0.0; w.len()];
        let mut z = vec![0.0; classes];
        for &i in batch {
            let x = self.data.row(i);
            self.logits(w, x, &mut z);
            softmax_in_place(&mut z);
            z[self.data.labels()[i]] -= 1.0;
            for (c, &err) in z.iter().enumerate() {
                for (g, xj) in grad[c * p..(c + 1) * p].iter_mut().zip(x) {
                    *g += err * xj;
                }
                grad[classes * p + c] += err;
            }
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        grad
    }

    fn initial_params(&self, _key: &StreamKey) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn accuracy(&self, w: &[f64], data: &LabeledDataset) -> Option<f64> {
        if data.is_empty() || data.n_features() != self.data.n_features() {
            return None;
        }
        let mut z = vec![0.0; self.data.classes()];
        let correct = (0..data.len())
            .filter(|&i| {
                self.logits(w, data.row(i), &mut z);
                argmax(&z) == data.labels()[i]
            })
            .count();
        Some(correct as f64 / data.len() as f64)
    }
}

/// Parameters: `W1` (`hidden x features`), `b1`, `W2` (`classes x hidden`), `b2`.
pub struct Mlp {
    data: Arc<LabeledDataset>,
    hidden: usize,
}

/// Rows used for the per-round gradient-norm estimate.
const MLP_PROXY_ROWS: usize = 512;

impl Mlp {
    fn offsets(&self) -> [usize; 4] {
        let (p, h, c) = (self.data.n_features(), self.hidden, self.data.classes());
        let b1 = h * p;
        let w2 = b1 + h;
        let b2 = w2 + c * h;
        [0, b1, w2, b2]
    }

    /// Hidden activations and output logits.
    fn forward(&self, w: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let [_, b1, w2, b2] = self.offsets();
        let p = x.len();
        for (u, a) in hidden.iter_mut().enumerate() {
            let row = &w[u * p..(u + 1) * p];
            *a = (w[b1 + u] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh();
        }
        let h = hidden.len();
        for (c, z) in out.iter_mut().enumerate() {
            let row = &w[w2 + c * h..w2 + (c + 1) * h];
            *z = w[b2 + c] + row.iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Evenly spaced rows for the gradient-norm proxy.
    pub fn proxy_rows(&self) -> Vec<usize> {
        let n = self.data.len();
        let m = n.min(MLP_PROXY_ROWS);
        (0..m).map(|i| i * n / m).collect()
    }
}

impl Objective for Mlp {
    fn dim(&self) -> usize {
        self.offsets()[3] + self.data.classes()
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn loss(&self, w: &[f64], batch: &[usize]) -> f64 {
        let mut hidden = vec![0.0; self.hidden];
        let mut out = vec![0.0; self.data.classes()];
        let total: f64 = batch
            .iter()
            .map(|&i| {
                self.forward(w, self.data.row(i), &mut hidden, &mut out);
                let label_logit = out[self.data.labels()[i]];
                softmax_in_place(&mut out) - label_logit
            })
            .sum();
        total / batch.len() as f64
    }

    fn stochastic_gradient(&self, w: &[f64], batch: &[usize]) -> Vec<f64> {
        let [_, b1, w2, b2] = self.offsets();
        let (p, h) = (self.data.n_features(), self.hidden);
        let mut grad = vec![0.0; w.len()];
        let mut hidden = vec![0.0; h];
        let mut out = vec![0.0; self.data.classes()];
        let mut back = vec![0.0; h];
        for &i in batch {
            let x = self.data.row(i);
            self.forward(w, x, &mut hidden, &mut out);
            softmax_in_place(&mut out);
            out[self.data.labels()[i]] -= 1.0;
            back.iter_mut().for_each(|b| *b = 0.0);
            for (c, &err) in out.iter().enumerate() {
                grad[b2 + c] += err;
                for u in 0..h {
                    grad[w2 + c * h + u] += err * hidden[u];
                    back[u] += err * w[w2 + c * h + u];
                }
            }
            for u in 0..h {
                let delta = back[u] * (1.0 - hidden[u] * hidden[u]);
                grad[b1 + u] += delta;
                for (g, xj) in grad[u * p..(u + 1) * p].iter_mut().zip(x) {
                    *g += delta * xj;
                }
            }
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        grad
    }

    fn initial_params(&self, key: &StreamKey) -> Vec<f64> {
        let [_, b1, w2, b2] = self.offsets();
        let (p, h, c) = (self.data.n_features() as f64, self.hidden as f64, self.data.classes() as f64);
        let mut rng = key.rng();
        let mut w = vec![0.0; self.dim()];
        let lim1 = (6.0 / (p + h)).sqrt();
        let lim2 = (6.0 / (h + c)).sqrt();
        w[..b1].iter_mut().for_each(|x| *x = rng.random_range(-lim1..lim1));
        w[w2..b2].iter_mut().for_each(|x| *x = rng.random_range(-lim2..lim2));
        w
    }

    fn accuracy(&self, w: &[f64], data: &LabeledDataset) -> Option<f64> {
        if data.is_empty() || data.n_features() != self.data.n_features() {
            return None;
        }
        let mut hidden = vec![0.0; self.hidden];
        let mut out = vec![0.0; self.data.classes()];
        let correct = (0..data.len())
            .filter(|&i| {
                self.forward(w, data.row(i), &mut hidden, &mut out);
                argmax(&out) == data.labels()[i]
            })
            .count();
        Some(correct as f64 / data.len() as f64)
    }

    fn exact_diagnostics(&self) -> bool {
        false
    }
}
