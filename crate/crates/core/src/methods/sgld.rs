use serde::{Deserialize, Serialize};

use crate::distributions::ProductDistribution;
use crate::error::{Error, Result};
use crate::rng::SampleStream;

/// Federated Langevin parameters.
///
/// Clients send `H + noise_std * z`; the server steps
/// `theta' = theta - server_lr * mean_c(H_c)`. Averaging `C` messages leaves
/// per-coordinate noise variance `server_lr^2 * noise_std^2 / C`, which
/// equals the Langevin `2 * step` when `noise_std = sqrt(2 * step * C) / server_lr`
/// (see [`SgldParams::calibrated_noise_std`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldParams {
    pub step: f64,
    pub server_lr: f64,
    pub noise_std: f64,
}

impl SgldParams {
    pub fn calibrated_noise_std(step: f64, server_lr: f64, participants: usize) -> f64 {
        (2.0 * step * participants as f64).sqrt() / server_lr
    }

    /// Noise variance per coordinate left in the server step.
    pub fn aggregate_noise_variance(&self, participants: usize) -> f64 {
        self.server_lr * self.server_lr * self.noise_std * self.noise_std / participants as f64
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("sgld.step", self.step),
            ("sgld.server_lr", self.server_lr),
            ("sgld.noise_std", self.noise_std),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `q = N(H, noise_std)` and `p = N(0, noise_std)`; per-coordinate KL is
/// `H_i^2 / (2 noise_std^2)`.
pub fn sgld_client_distributions(h: &[f64], params: &SgldParams) -> Result<(ProductDistribution, ProductDistribution)> {
    let q = ProductDistribution::gaussian(h.to_vec(), params.noise_std)?;
    let p = ProductDistribution::gaussian(vec![0.0; h.len()], params.noise_std)?;
    Ok((q, p))
}

/// The uncompressed message `H + noise_std * z`.
pub fn sgld_exact_message(h: &[f64], params: &SgldParams, stream: &mut SampleStream) -> Vec<f64> {
    h.iter()
        .map(|&x| x + params.noise_std * stream.next_gaussian())
        .collect()
}

pub fn sgld_server_step(theta: &[f64], decoded: &[Vec<f64>], params: &SgldParams) -> Result<Vec<f64>> {
    if decoded.is_empty() {
        return Err(Error::InvalidParameter("server step needs at least one client".into()));
    }
    if let Some(v) = decoded.iter().find(|v| v.len() != theta.len()) {
        return Err(Error::LengthMismatch {
            expected: theta.len(),
            actual: v.len(),
        });
    }
    let scale = params.server_lr / decoded.len() as f64;
    let mut out = theta.to_vec();
    for v in decoded {
        out.iter_mut().zip(v).for_each(|(t, h)| *t -= scale * h);
    }
    Ok(out)
}
