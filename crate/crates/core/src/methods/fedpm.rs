use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::DeskModel;
use crate::rng::{shuffle, SampleStream};

/// When the server resets its Beta posterior to the prior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ResetSchedule {
    #[default]
    Never,
    /// Reset before aggregating rounds `0, every, 2 * every, ...`.
    Every { every: u32 },
}

impl ResetSchedule {
    pub fn resets_at(&self, round: u32) -> bool {
        match *self {
            ResetSchedule::Never => false,
            ResetSchedule::Every { every } => every > 0 && round.is_multiple_of(every),
        }
    }
}

/// Server state of probabilistic mask training over frozen weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FedPmState {
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub prior: f64,
    pub w_init: Vec<f64>,
    pub reset: ResetSchedule,
}

impl FedPmState {
    /// Starts at `theta = 0.5` with `alpha = beta = prior`.
    pub fn new(w_init: Vec<f64>, prior: f64, reset: ResetSchedule) -> Result<Self> {
        if !(prior > 0.0 && prior.is_finite()) {
            return Err(Error::config("fedpm.prior", format!("must be > 0, got {prior}")));
        }
        let d = w_init.len();
        Ok(Self {
            theta: vec![0.5; d],
            alpha: vec![prior; d],
            beta: vec![prior; d],
            prior,
            w_init,
            reset,
        })
    }

    /// Effective weights of a mask.
    pub fn masked_weights(&self, mask: &[f64]) -> Vec<f64> {
        self.w_init.iter().zip(mask).map(|(w, m)| w * m).collect()
    }
}

/// Beta-Bernoulli aggregation of binary masks. Resets the posterior first if
/// the schedule says so, adds the mask counts, and sets `theta` to the Beta
/// mode `(alpha - 1) / (alpha + beta - 2)` clamped to `[0, 1]`; where the
/// mode is undefined (`alpha + beta <= 2`) the mean is used. With no masks
/// the state is left untouched.
pub fn bayes_agg(masks: &[Vec<f64>], state: &mut FedPmState, round: u32) -> Result<()> {
    if masks.is_empty() {
        return Ok(());
    }
    let d = state.theta.len();
    for m in masks {
        if m.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                actual: m.len(),
            });
        }
        if let Some(i) = m.iter().position(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mask entry {i} = {} is not binary",
                m[i]
            )));
        }
    }
    if state.reset.resets_at(round) {
        state.alpha.fill(state.prior);
        state.beta.fill(state.prior);
    }
    let c = masks.len() as f64;
    for i in 0..d {
        let agg: f64 = masks.iter().map(|m| m[i]).sum();
        state.alpha[i] += agg;
        state.beta[i] += c - agg;
        let (a, b) = (state.alpha[i], state.beta[i]);
        let denom = a + b - 2.0;
        state.theta[i] = if denom > 0.0 {
            ((a - 1.0) / denom).clamp(0.0, 1.0)
        } else {
            a / (a + b)
        };
    }
    Ok(())
}

/// Local optimizer settings shared by all methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl LocalHyper {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(
                format!("{prefix}.lr"),
                format!("must be >= 0, got {}", self.lr),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{prefix}.batch_size"), "must be >= 1"));
        }
        Ok(())
    }
}

/// Minibatches for one epoch over `shard`, reshuffled from `stream`. A
/// shard smaller than the batch size forms a single batch.
pub(crate) fn epoch_batches(shard: &[usize], batch_size: usize, stream: &mut SampleStream) -> Vec<Vec<usize>> {
    let mut order = shard.to_vec();
    shuffle(&mut order, stream);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Trains mask scores on one shard and returns `sigmoid(scores)`.
///
/// Each step samples a mask `m ~ Bern(sigmoid(s))`, evaluates the loss of
/// `m * w_init`, and moves the scores along the straight-through gradient
/// `dL/dw * w_init * sigmoid'(s)`.
pub fn fedpm_local_train(
    scores: &[f64],
    w_init: &[f64],
    model: &DeskModel,
    data: &Dataset,
    shard: &[usize],
    hyper: &LocalHyper,
    stream: &mut SampleStream,
) -> Result<Vec<f64>> {
    if shard.is_empty() {
        return Err(Error::InvalidParameter("empty client shard".into()));
    }
    if scores.len() != w_init.len() {
        return Err(Error::LengthMismatch {
            expected: w_init.len(),
            actual: scores.len(),
        });
    }
    let mut s = scores.to_vec();
    let mut w = vec![0.0; s.len()];
    if hyper.lr > 0.0 {
        for _ in 0..hyper.epochs {
            for batch in epoch_batches(shard, hyper.batch_size, stream) {
                for i in 0..s.len() {
                    let mask = f64::from(u8::from(stream.next_uniform() < sigmoid(s[i])));
                    w[i] = mask * w_init[i];
                }
                let (_, g) = model.loss_grad(&w, data, &batch)?;
                for i in 0..s.len() {
                    let phi = sigmoid(s[i]);
                    s[i] -= hyper.lr * g[i] * w_init[i] * phi * (1.0 - phi);
                }
            }
        }
    }
    Ok(s.into_iter().map(sigmoid).collect())
}

/// Scores whose sigmoid is `theta`, with `theta` clamped to
/// `[eps, 1 - eps]` so the logit stays finite.
pub fn scores_from_probs(theta: &[f64], eps: f64) -> Vec<f64> {
    theta
        .iter()
        .map(|&t| {
            let t = t.clamp(eps, 1.0 - eps);
            (t / (1.0 - t)).ln()
        })
        .collect()
}
