use serde::{Deserialize, Serialize};

use crate::distributions::{ProductDistribution, Ternary};
use crate::error::{Error, Result};
use crate::rng::SampleStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QsgdParams {
    /// Quantization levels `s` of the baseline quantizer.
    pub levels: u32,
    pub server_lr: f64,
}

impl QsgdParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("qsgd.levels", "must be >= 1"));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(Error::config(
                "qsgd.server_lr",
                format!("must be > 0, got {}", self.server_lr),
            ));
        }
        Ok(())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One-level QSGD as a ternary distribution over sign patterns, carrying
/// `||v||` as the scale: `P(+1) = max(v_i, 0) / ||v||`,
/// `P(-1) = max(-v_i, 0) / ||v||`, `P(0)` the rest. A zero vector maps to
/// all mass on 0 with norm 0.
pub fn qsgd_client_distribution(v: &[f64]) -> Result<ProductDistribution> {
    let norm = l2(v);
    if !norm.is_finite() {
        return Err(Error::InvalidParameter("update has a non-finite norm".into()));
    }
    let probs: Vec<Ternary> = v
        .iter()
        .map(|&x| {
            if norm == 0.0 {
                return [0.0, 1.0, 0.0];
            }
            let a = (x.abs() / norm).min(1.0);
            if x >= 0.0 {
                [0.0, 1.0 - a, a]
            } else {
                [a, 1.0 - a, 0.0]
            }
        })
        .collect();
    ProductDistribution::ternary(probs, norm)
}

/// Baseline `s`-level stochastic quantizer. Returns the quantized vector
/// and the integer levels (for bit accounting).
pub fn qsgd_quantize(v: &[f64], levels: u32, stream: &mut SampleStream) -> (Vec<f64>, Vec<u32>) {
    let norm = l2(v);
    let s = f64::from(levels);
    let mut out = Vec::with_capacity(v.len());
    let mut lv = Vec::with_capacity(v.len());
    for &x in v {
        let u = stream.next_uniform();
        if norm == 0.0 {
            out.push(0.0);
            lv.push(0);
            continue;
        }
        let scaled = (x.abs() * s / norm).min(s);
        let floor = scaled.floor();
        let level = if u < scaled - floor { floor + 1.0 } else { floor };
        lv.push(level as u32);
        out.push(x.signum() * level * norm / s);
    }
    (out, lv)
}

/// Global reference for one-level QSGD-KLMS: per coordinate, the
/// Laplace-smoothed frequency `(count + 1) / (C + 3)` of each pattern value
/// among last round's decoded patterns. With no history every symbol gets
/// 1/3.
pub fn qsgd_klms_global_distribution(decoded_patterns: &[Vec<f64>], dim: usize) -> Result<ProductDistribution> {
    if decoded_patterns.is_empty() {
        return ProductDistribution::ternary(vec![[1.0 / 3.0; 3]; dim], 1.0);
    }
    let mut counts = vec![[0u32; 3]; dim];
    for pattern in decoded_patterns {
        if pattern.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: pattern.len(),
            });
        }
        for (c, &x) in counts.iter_mut().zip(pattern) {
            let sym = match x {
                v if v == -1.0 => 0,
                v if v == 0.0 => 1,
                v if v == 1.0 => 2,
                v => return Err(Error::InvalidParameter(format!("{v} is not a ternary pattern value"))),
            };
            c[sym] += 1;
        }
    }
    let denom = decoded_patterns.len() as f64 + 3.0;
    let probs = counts
        .iter()
        .map(|c| {
            let neg = (f64::from(c[0]) + 1.0) / denom;
            let pos = (f64::from(c[2]) + 1.0) / denom;
            [neg, 1.0 - neg - pos, pos]
        })
        .collect();
    ProductDistribution::ternary(probs, 1.0)
}
