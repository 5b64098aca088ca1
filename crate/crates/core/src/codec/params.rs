use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest index width the codec accepts; `K = 2^bits` samples are drawn per
/// block, so this bounds encoder work.
pub const MAX_INDEX_BITS: u32 = 24;

/// Session constants shared out of band by clients and server. KL values are
/// in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecParams {
    pub d_kl_target: f64,
    pub overhead_r: f64,
    pub max_block_size: usize,
    pub kl_max_threshold: f64,
    pub kl_min_threshold: f64,
}

impl Default for CodecParams {
    fn default() -> Self {
        Self {
            d_kl_target: 3.0,
            overhead_r: 0.0,
            max_block_size: 1024,
            kl_max_threshold: 4.5,
            kl_min_threshold: 1.5,
        }
    }
}

impl CodecParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(field, msg));
        if !(self.d_kl_target.is_finite() && self.d_kl_target > 0.0) {
            return bad("d_kl_target", format!("must be > 0, got {}", self.d_kl_target));
        }
        if !(self.overhead_r.is_finite() && self.overhead_r >= 0.0) {
            return bad("overhead_r", format!("must be >= 0, got {}", self.overhead_r));
        }
        if self.max_block_size == 0 || self.max_block_size > u32::MAX as usize {
            return bad(
                "max_block_size",
                format!("must be in 1..=2^32-1, got {}", self.max_block_size),
            );
        }
        if !(self.kl_min_threshold <= self.d_kl_target && self.d_kl_target <= self.kl_max_threshold) {
            return bad(
                "kl_min_threshold",
                format!(
                    "thresholds must satisfy min <= target <= max, got {} <= {} <= {}",
                    self.kl_min_threshold, self.d_kl_target, self.kl_max_threshold
                ),
            );
        }
        let bits = self.bits_per_index();
        if bits > MAX_INDEX_BITS {
            return bad(
                "d_kl_target",
                format!("target + overhead needs {bits} index bits, limit is {MAX_INDEX_BITS}"),
            );
        }
        Ok(())
    }

    /// Index width shared by every block: `ceil((target + r) / ln 2)`, at least 1.
    pub fn bits_per_index(&self) -> u32 {
        samples_per_block(self.d_kl_target, self).1
    }

    /// Samples drawn per block, `2^bits_per_index`.
    pub fn samples_per_index(&self) -> u64 {
        1u64 << self.bits_per_index()
    }

    /// Width of one block-length field in the location payload.
    pub fn location_field_bits(&self) -> u32 {
        super::ceil_log2(self.max_block_size)
    }
}

/// Sample count for a block of KL `block_kl` nats: `bits = ceil((kl + r) / ln 2)`
/// clamped to at least 1, `K = 2^bits`. Returns `(K, bits)`; `K` saturates
/// at `u64::MAX` for absurd inputs.
pub fn samples_per_block(block_kl: f64, params: &CodecParams) -> (u64, u32) {
    let raw = ((block_kl.max(0.0) + params.overhead_r) / LN_2).ceil();
    let bits = if raw.is_finite() {
        raw.clamp(1.0, 64.0) as u32
    } else {
        64
    };
    let k = if bits >= 64 { u64::MAX } else { 1u64 << bits };
    (k, bits)
}

/// Strict threshold test run by the server on the clients' mean block KL.
pub fn should_update_partition(avg_kl_across_clients: f64, params: &CodecParams) -> bool {
    avg_kl_across_clients > params.kl_max_threshold || avg_kl_across_clients < params.kl_min_threshold
}
