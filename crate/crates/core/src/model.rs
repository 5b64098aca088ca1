//! Small classifiers with closed-form gradients.
//!
//! Parameters live in one flat vector:
//! - logistic: `W` (classes x inputs, row-major), then `b`.
//! - mlp: `W1` (hidden x inputs), `b1`, `W2` (classes x hidden), `b2`;
//!   tanh hidden units.
//!
//! Loss is mean softmax cross-entropy over the batch.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::SampleStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelKind {
    Logistic,
    Mlp { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeskModel {
    pub kind: ModelKind,
    pub inputs: usize,
    pub classes: usize,
}

impl DeskModel {
    pub fn new(kind: ModelKind, inputs: usize, classes: usize) -> Self {
        Self { kind, inputs, classes }
    }

    pub fn num_params(&self) -> usize {
        match self.kind {
            ModelKind::Logistic => self.classes * (self.inputs + 1),
            ModelKind::Mlp { hidden } => hidden * (self.inputs + 1) + self.classes * (hidden + 1),
        }
    }

    /// Gaussian weights with std `1/sqrt(fan_in)` scaled by `gain`; zero biases.
    pub fn init(&self, gain: f64, stream: &mut SampleStream) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.num_params());
        let mut layer = |w: &mut Vec<f64>, rows: usize, cols: usize| {
            let s = gain / (cols as f64).sqrt();
            w.extend((0..rows * cols).map(|_| s * stream.next_gaussian()));
            w.extend(std::iter::repeat_n(0.0, rows));
        };
        match self.kind {
            ModelKind::Logistic => layer(&mut w, self.classes, self.inputs),
            ModelKind::Mlp { hidden } => {
                layer(&mut w, hidden, self.inputs);
                layer(&mut w, self.classes, hidden);
            }
        }
        w
    }

    fn check(&self, w: &[f64], data: &Dataset) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                actual: w.len(),
            });
        }
        if data.dim() != self.inputs {
            return Err(Error::LengthMismatch {
                expected: self.inputs,
                actual: data.dim(),
            });
        }
        Ok(())
    }

    /// Class scores for one input; `hidden` receives the tanh activations
    /// for the MLP.
    fn forward(&self, w: &[f64], x: &[f64], hidden_out: &mut Vec<f64>, logits: &mut Vec<f64>) {
        logits.clear();
        match self.kind {
            ModelKind::Logistic => {
                let (wm, b) = w.split_at(self.classes * self.inputs);
                for k in 0..self.classes {
                    logits.push(b[k] + dot(&wm[k * self.inputs..(k + 1) * self.inputs], x));
                }
            }
            ModelKind::Mlp { hidden } => {
                let (w1, rest) = w.split_at(hidden * self.inputs);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(self.classes * hidden);
                hidden_out.clear();
                for j in 0..hidden {
                    hidden_out.push((b1[j] + dot(&w1[j * self.inputs..(j + 1) * self.inputs], x)).tanh());
                }
                for k in 0..self.classes {
                    logits.push(b2[k] + dot(&w2[k * hidden..(k + 1) * hidden], hidden_out));
                }
            }
        }
    }

    pub fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let (mut h, mut z) = (Vec::new(), Vec::new());
        self.forward(w, x, &mut h, &mut z);
        argmax(&z)
    }

    /// Mean cross-entropy and its gradient over the examples in `batch`.
    pub fn loss_grad(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check(w, data)?;
        if batch.is_empty() {
            return Err(Error::InvalidParameter("empty batch".into()));
        }
        let mut grad = vec![0.0; w.len()];
        let (mut h, mut z) = (Vec::new(), Vec::new());
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let x = data.features(i);
            let y = data.label(i) as usize;
            self.forward(w, x, &mut h, &mut z);
            let lse = log_sum_exp(&z);
            loss += lse - z[y];
            // dL/dz = softmax - onehot
            let dz: Vec<f64> = z
                .iter()
                .enumerate()
                .map(|(k, &v)| scale * ((v - lse).exp() - f64::from(u8::from(k == y))))
                .collect();
            match self.kind {
                ModelKind::Logistic => {
                    let (gw, gb) = grad.split_at_mut(self.classes * self.inputs);
                    for k in 0..self.classes {
                        axpy(dz[k], x, &mut gw[k * self.inputs..(k + 1) * self.inputs]);
                        gb[k] += dz[k];
                    }
                }
                ModelKind::Mlp { hidden } => {
                    let w2 = &w[hidden * (self.inputs + 1)..hidden * (self.inputs + 1) + self.classes * hidden];
                    let (g1, rest) = grad.split_at_mut(hidden * self.inputs);
                    let (gb1, rest) = rest.split_at_mut(hidden);
                    let (g2, gb2) = rest.split_at_mut(self.classes * hidden);
                    let mut dh = vec![0.0; hidden];
                    for k in 0..self.classes {
                        axpy(dz[k], &h, &mut g2[k * hidden..(k + 1) * hidden]);
                        gb2[k] += dz[k];
                        axpy(dz[k], &w2[k * hidden..(k + 1) * hidden], &mut dh);
                    }
                    for j in 0..hidden {
                        let da = dh[j] * (1.0 - h[j] * h[j]);
                        axpy(da, x, &mut g1[j * self.inputs..(j + 1) * self.inputs]);
                        gb1[j] += da;
                    }
                }
            }
        }
        Ok((loss * scale, grad))
    }

    pub fn loss(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> Result<f64> {
        self.check(w, data)?;
        let (mut h, mut z) = (Vec::new(), Vec::new());
        let total: f64 = batch
            .iter()
            .map(|&i| {
                self.forward(w, data.features(i), &mut h, &mut z);
                log_sum_exp(&z) - z[data.label(i) as usize]
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Top-1 accuracy; errors on an empty set.
    pub fn accuracy(&self, w: &[f64], data: &Dataset) -> Result<f64> {
        self.check(w, data)?;
        if data.is_empty() {
            return Err(Error::InvalidParameter("cannot evaluate on an empty set".into()));
        }
        let correct = (0..data.len())
            .filter(|&i| self.predict(w, data.features(i)) == data.label(i) as usize)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn toy_data(stream: &mut SampleStream, n: usize, dim: usize, classes: u32) -> Dataset {
        let features = (0..n * dim).map(|_| stream.next_gaussian()).collect();
        let labels = (0..n).map(|_| stream.next_below(u64::from(classes)) as u32).collect();
        Dataset::new(features, labels, dim, classes as usize).unwrap()
    }

    fn check_gradient(kind: ModelKind) {
        let mut s = StreamKey::new(3).with("fd", 0).stream();
        let model = DeskModel::new(kind, 5, 3);
        let data = toy_data(&mut s, 8, 5, 3);
        let batch: Vec<usize> = (0..8).collect();
        let w = model.init(1.5, &mut s);
        let (_, grad) = model.loss_grad(&w, &data, &batch).unwrap();
        for _ in 0..20 {
            let i = s.next_below(w.len() as u64) as usize;
            let h = 1e-5;
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            let fd = (model.loss(&wp, &data, &batch).unwrap() - model.loss(&wm, &data, &batch).unwrap()) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!((fd - grad[i]).abs() / denom < 1e-5, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        check_gradient(ModelKind::Logistic);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        check_gradient(ModelKind::Mlp { hidden: 4 });
    }

    #[test]
    fn constant_model_on_single_class() {
        let model = DeskModel::new(ModelKind::Logistic, 2, 3);
        let mut w = vec![0.0; model.num_params()];
        w[6 + 2] = 1.0; // bias of class 2
        let data = Dataset::new(vec![0.3, -1.0, 2.0, 0.5], vec![2, 2], 2, 3).unwrap();
        assert_eq!(model.accuracy(&w, &data).unwrap(), 1.0);
        let empty = Dataset::new(vec![], vec![], 2, 3).unwrap();
        assert!(model.accuracy(&w, &empty).is_err());
    }

    #[test]
    fn untrained_model_is_near_chance() {
        let mut s = StreamKey::new(8).with("chance", 0).stream();
        let data = toy_data(&mut s, 1000, 10, 10);
        let model = DeskModel::new(ModelKind::Logistic, 10, 10);
        let w = model.init(1.0, &mut s);
        let acc = model.accuracy(&w, &data).unwrap();
        assert!((acc - 0.1).abs() <= 0.03, "accuracy {acc}");
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(DeskModel::new(ModelKind::Logistic, 784, 10).num_params(), 7850);
        assert_eq!(
            DeskModel::new(ModelKind::Mlp { hidden: 32 }, 20, 2).num_params(),
            32 * 21 + 2 * 33
        );
    }
}
