//! Bits-versus-KL study on a drifting Bernoulli sequence.
//!
//! Each round draws a fresh `q` against a fixed reference `p` so that the
//! per-coordinate KL follows `kl_min * (kl_max / kl_min)^s` with
//! `s = (1 + sin(2 pi (waves * i / d + t / rounds))) / 2`: a profile that
//! varies by `kl_max / kl_min` across coordinates and moves with `t`.
//! Adaptive blocks are re-split every round; the fixed scheme uses the block
//! size giving the same mean number of blocks.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::codec::{
    encode_update, split_blocks_adaptive, split_blocks_fixed, BlockPartition, CodecParams, MessageHeader,
};
use crate::distributions::ProductDistribution;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    pub dim: usize,
    pub rounds: u32,
    pub kl_min: f64,
    pub kl_max: f64,
    pub waves: f64,
    pub codec: CodecParams,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            dim: 10_000,
            rounds: 50,
            kl_min: 0.005,
            kl_max: 0.05,
            waves: 3.0,
            codec: CodecParams::default(),
            seed: 0,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.rounds == 0 {
            return Err(Error::config("dim", "dim and rounds must be >= 1"));
        }
        if !(self.kl_min > 0.0 && self.kl_min <= self.kl_max && self.kl_max < 0.3) {
            return Err(Error::config("kl_min", "need 0 < kl_min <= kl_max < 0.3"));
        }
        self.codec.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftRound {
    pub round: u32,
    pub total_kl: f64,
    /// `total_kl / ln 2 + M r / ln 2` for the adaptive partition.
    pub kl_bound_bits: f64,
    pub adaptive_blocks: usize,
    pub adaptive_payload_bits: u64,
    pub fixed_blocks: usize,
    pub fixed_payload_bits: u64,
    /// Fixed blocks whose KL is at least twice, or at most half, the
    /// `bits * ln 2` nats their index affords.
    pub fixed_off_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub rounds: Vec<DriftRound>,
    pub fixed_block_size: usize,
    /// Mean over rounds of adaptive payload bits over `kl_bound_bits`.
    pub mean_bits_to_bound: f64,
    /// Share of all fixed blocks (over all rounds) off budget by 2x.
    pub fixed_off_budget_fraction: f64,
}

/// `q > p` with `KL(Bern(q) || Bern(p)) = kl`, by bisection.
fn bernoulli_with_kl(p: f64, kl: f64) -> f64 {
    let f = |q: f64| {
        let a = if q > 0.0 { q * (q / p).ln() } else { 0.0 };
        let b = if q < 1.0 {
            (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln()
        } else {
            0.0
        };
        a + b
    };
    let (mut lo, mut hi) = (p, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < kl {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

struct RoundInput {
    q: ProductDistribution,
    kl: Vec<f64>,
}

fn round_input(cfg: &DriftConfig, p_probs: &[f64], t: u32) -> Result<RoundInput> {
    let d = cfg.dim as f64;
    let ratio = cfg.kl_max / cfg.kl_min;
    let phase = f64::from(t) / f64::from(cfg.rounds);
    let probs: Vec<f64> = p_probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let s = 0.5 * (1.0 + (2.0 * PI * (cfg.waves * i as f64 / d + phase)).sin());
            let q = bernoulli_with_kl(p, cfg.kl_min * ratio.powf(s));
            q.min(1.0 - 1e-12)
        })
        .collect();
    let q = ProductDistribution::bernoulli(probs)?;
    let p = ProductDistribution::bernoulli(p_probs.to_vec())?;
    let kl = q.kl_per_coordinate(&p)?;
    Ok(RoundInput { q, kl })
}

pub fn run_drift(cfg: &DriftConfig) -> Result<DriftReport> {
    cfg.validate()?;
    let root = StreamKey::new(cfg.seed).with("drift", 0);
    let mut s = root.child("reference", 0).stream();
    let p_probs: Vec<f64> = (0..cfg.dim).map(|_| 0.3 + 0.4 * s.next_uniform()).collect();
    let p = ProductDistribution::bernoulli(p_probs.clone())?;
    let params = &cfg.codec;
    let bits = params.bits_per_index();
    let budget = f64::from(bits) * LN_2;

    let encode = |q: &ProductDistribution, part: &BlockPartition, t: u32, tag: &str| -> Result<u64> {
        let key = root.child("round", u64::from(t)).child(tag, 0);
        let out = encode_update(q, &p, part, params, &key, MessageHeader::default(), false)?;
        Ok(out.cost.payload_bits)
    };

    let inputs: Vec<RoundInput> = (0..cfg.rounds)
        .map(|t| round_input(cfg, &p_probs, t))
        .collect::<Result<_>>()?;
    let adaptive: Vec<BlockPartition> = inputs
        .iter()
        .map(|r| split_blocks_adaptive(&r.kl, params))
        .collect::<Result<_>>()?;
    let mean_blocks = adaptive.iter().map(|a| a.num_blocks() as f64).sum::<f64>() / f64::from(cfg.rounds);
    let fixed_block_size = ((cfg.dim as f64 / mean_blocks).round() as usize).clamp(1, params.max_block_size);
    let fixed = split_blocks_fixed(cfg.dim, fixed_block_size)?;

    let mut rounds = Vec::with_capacity(inputs.len());
    let (mut off_total, mut fixed_total) = (0usize, 0usize);
    for (t, (input, part)) in (0u32..).zip(inputs.iter().zip(&adaptive)) {
        let total_kl: f64 = input.kl.iter().sum();
        let m = part.num_blocks();
        let adaptive_payload_bits = encode(&input.q, part, t, "adaptive")?;
        let fixed_payload_bits = encode(&input.q, &fixed, t, "fixed")?;
        let fixed_off_budget = fixed
            .ranges()
            .filter(|r| {
                let kl: f64 = input.kl[r.clone()].iter().sum();
                kl >= 2.0 * budget || kl <= 0.5 * budget
            })
            .count();
        off_total += fixed_off_budget;
        fixed_total += fixed.num_blocks();
        rounds.push(DriftRound {
            round: t,
            total_kl,
            kl_bound_bits: (total_kl + m as f64 * params.overhead_r) / LN_2,
            adaptive_blocks: m,
            adaptive_payload_bits,
            fixed_blocks: fixed.num_blocks(),
            fixed_payload_bits,
            fixed_off_budget,
        });
    }
    let mean_bits_to_bound = rounds
        .iter()
        .map(|r| r.adaptive_payload_bits as f64 / r.kl_bound_bits)
        .sum::<f64>()
        / rounds.len() as f64;
    Ok(DriftReport {
        rounds,
        fixed_block_size,
        mean_bits_to_bound,
        fixed_off_budget_fraction: off_total as f64 / fixed_total as f64,
    })
}

pub const DRIFT_HEADER: [&str; 8] = [
    "round",
    "total_kl",
    "kl_bound_bits",
    "adaptive_blocks",
    "adaptive_payload_bits",
    "fixed_blocks",
    "fixed_payload_bits",
    "fixed_off_budget",
];

pub fn drift_csv(report: &DriftReport) -> String {
    let mut out = DRIFT_HEADER.join(",");
    out.push('\n');
    for r in &report.rounds {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round,
            r.total_kl,
            r.kl_bound_bits,
            r.adaptive_blocks,
            r.adaptive_payload_bits,
            r.fixed_blocks,
            r.fixed_payload_bits,
            r.fixed_off_budget
        ));
    }
    out
}
