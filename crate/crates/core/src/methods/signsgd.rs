use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::distributions::ProductDistribution;
use crate::error::{Error, Result};
use crate::rng::SampleStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignParams {
    /// Temperature `M` in `P(+1) = sigmoid(v / M)`.
    pub temperature: f64,
    pub server_lr: f64,
}

impl SignParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(
                "signsgd.temperature",
                format!("must be > 0, got {}", self.temperature),
            ));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(Error::config(
                "signsgd.server_lr",
                format!("must be > 0, got {}", self.server_lr),
            ));
        }
        Ok(())
    }
}

pub fn signsgd_client_distribution(v: &[f64], params: &SignParams) -> Result<ProductDistribution> {
    ProductDistribution::binary_sign(v.iter().map(|&x| sigmoid(x / params.temperature)).collect())
}

/// Fair coin over `{-1, +1}` per coordinate.
pub fn signsgd_global_distribution(dim: usize) -> Result<ProductDistribution> {
    ProductDistribution::uniform_sign(dim)
}

/// Baseline path: one stochastic sign per coordinate, 1 bit each.
pub fn signsgd_sample(v: &[f64], params: &SignParams, stream: &mut SampleStream) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            if stream.next_uniform() < sigmoid(x / params.temperature) {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn params() -> SignParams {
        SignParams {
            temperature: 0.5,
            server_lr: 0.01,
        }
    }

    #[test]
    fn probabilities() {
        let q = signsgd_client_distribution(&[0.0, 0.5, 1e6], &params()).unwrap();
        let ProductDistribution::BinarySign { p_pos } = q else {
            panic!()
        };
        assert_eq!(p_pos[0], 0.5);
        assert!((p_pos[1] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(p_pos[2] > 1.0 - 1e-12);
    }

    #[test]
    fn confident_coordinates_keep_their_sign() {
        let p = params();
        let v = [5.0 * p.temperature, -7.0 * p.temperature];
        let mut s = StreamKey::new(4).with("sign", 0).stream();
        let n = 10_000;
        let mut agree = [0usize; 2];
        for _ in 0..n {
            let out = signsgd_sample(&v, &p, &mut s);
            agree[0] += usize::from(out[0] > 0.0);
            agree[1] += usize::from(out[1] < 0.0);
        }
        assert!(agree.iter().all(|&a| a as f64 / n as f64 >= 0.99));
    }
}
