use std::ops::Range;

use crate::codec::MAX_INDEX_BITS;
use crate::distributions::ProductDistribution;
use crate::error::{Error, Result};
use crate::rng::SampleStream;

/// Per-coordinate `ln q - ln p`, tabulated per symbol for discrete kinds.
enum LogRatio {
    Table(Vec<[f64; 3]>),
    Gaussian {
        mq: Vec<f64>,
        mp: Vec<f64>,
        inv_two_var: f64,
    },
}

impl LogRatio {
    fn new(q: &ProductDistribution, p: &ProductDistribution, range: Range<usize>) -> Self {
        if let (
            ProductDistribution::DiagonalGaussian { means: mq, std },
            ProductDistribution::DiagonalGaussian { means: mp, .. },
        ) = (q, p)
        {
            return LogRatio::Gaussian {
                mq: mq[range.clone()].to_vec(),
                mp: mp[range].to_vec(),
                inv_two_var: 1.0 / (2.0 * std * std),
            };
        }
        LogRatio::Table(
            range
                .map(|i| {
                    let (qs, ps) = (q.symbol_probs(i), p.symbol_probs(i));
                    std::array::from_fn(|s| {
                        if ps[s] == 0.0 || qs[s] == 0.0 {
                            f64::NEG_INFINITY
                        } else {
                            qs[s].ln() - ps[s].ln()
                        }
                    })
                })
                .collect(),
        )
    }

    fn eval(&self, p: &ProductDistribution, y: &[f64]) -> f64 {
        match self {
            LogRatio::Table(t) => y
                .iter()
                .zip(t)
                .map(|(&v, row)| p.symbol(v).map_or(f64::NEG_INFINITY, |s| row[s]))
                .sum(),
            LogRatio::Gaussian { mq, mp, inv_two_var } => {
                let mut acc = 0.0;
                for ((&v, &a), &b) in y.iter().zip(mq).zip(mp) {
                    acc += ((v - b) * (v - b) - (v - a) * (v - a)) * inv_two_var;
                }
                acc
            }
        }
    }
}

fn check_k(k: u64) -> Result<()> {
    if k == 0 || k > 1u64 << MAX_INDEX_BITS {
        return Err(Error::InvalidParameter(format!(
            "K = {k} must be in 1..=2^{MAX_INDEX_BITS}"
        )));
    }
    Ok(())
}

fn check_range(p: &ProductDistribution, range: &Range<usize>) -> Result<()> {
    if range.start >= range.end || range.end > p.dim() {
        return Err(Error::Range {
            lo: range.start,
            hi: range.end,
            dim: p.dim(),
        });
    }
    Ok(())
}

/// Draws per sample of a block; sample `k` starts `k` times this far into
/// the shared stream.
fn sample_stride(p: &ProductDistribution, range: &Range<usize>) -> u64 {
    range.len() as u64 * p.draws_per_coordinate()
}

/// Normalized importance weights `pi(k) ∝ q(y_k) / p(y_k)` for given samples,
/// via a max-shifted softmax of the log-ratios.
pub fn importance_weights(
    q: &ProductDistribution,
    p: &ProductDistribution,
    range: Range<usize>,
    samples: &[Vec<f64>],
) -> Result<Vec<f64>> {
    q.compatible(p)?;
    check_range(p, &range)?;
    if let Some(s) = samples.iter().find(|s| s.len() != range.len()) {
        return Err(Error::LengthMismatch {
            expected: range.len(),
            actual: s.len(),
        });
    }
    let lr = LogRatio::new(q, p, range.clone());
    let logw: Vec<f64> = samples.iter().map(|y| lr.eval(p, y)).collect();
    softmax(&logw).ok_or(Error::EmptySupport {
        start: range.start,
        samples: samples.len() as u64,
    })
}

fn softmax(logw: &[f64]) -> Option<Vec<f64>> {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut w: Vec<f64> = logw.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Some(w)
}

/// Categorical draw with the strict `u < cumsum` rule. If rounding leaves
/// `u` above the final cumulative sum, the last index with positive weight
/// is taken.
fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Encodes one block. Draws `K` samples from `p` out of `shared`, picks one
/// with probability proportional to `q/p` using one uniform from `selector`,
/// and returns `(k*, y*)`. `shared` always ends `K * len * draws` past where
/// it started, whatever the outcome.
pub fn encode_block(
    q: &ProductDistribution,
    p: &ProductDistribution,
    range: Range<usize>,
    k: u64,
    shared: &mut SampleStream,
    selector: &mut SampleStream,
) -> Result<(u64, Vec<f64>)> {
    q.compatible(p)?;
    check_range(p, &range)?;
    check_k(k)?;
    let start = shared.position();
    let lr = LogRatio::new(q, p, range.clone());
    let mut buf = Vec::with_capacity(range.len());
    let mut logw = Vec::with_capacity(k as usize);
    for _ in 0..k {
        buf.clear();
        p.sample_into(range.clone(), shared, &mut buf);
        logw.push(lr.eval(p, &buf));
    }
    let weights = softmax(&logw).ok_or(Error::EmptySupport {
        start: range.start,
        samples: k,
    })?;
    let chosen = pick(&weights, selector.next_uniform()) as u64;

    shared.seek(start);
    let y = decode_block(p, range, k, shared, chosen)?;
    Ok((chosen, y))
}

/// Regenerates sample `k*` of the block from `shared` without drawing the
/// others. `shared` is left past all `K` samples, mirroring the encoder.
pub fn decode_block(
    p: &ProductDistribution,
    range: Range<usize>,
    k: u64,
    shared: &mut SampleStream,
    index: u64,
) -> Result<Vec<f64>> {
    check_range(p, &range)?;
    check_k(k)?;
    if index >= k {
        return Err(Error::IndexOutOfRange { block: 0, index, k });
    }
    let start = shared.position();
    let stride = sample_stride(p, &range);
    shared.seek(start + index * stride);
    let mut y = Vec::with_capacity(range.len());
    p.sample_into(range, shared, &mut y);
    shared.seek(start + k * stride);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use proptest::prelude::*;

    fn streams(seed: u64) -> (SampleStream, SampleStream) {
        let base = StreamKey::new(seed).with("test", 0);
        (base.child("block", 0).stream(), base.child("select", 0).stream())
    }

    fn bern(p: &[f64]) -> ProductDistribution {
        ProductDistribution::bernoulli(p.to_vec()).unwrap()
    }

    #[test]
    fn identical_distributions_give_uniform_weights() {
        let q = bern(&[0.3, 0.7, 0.5]);
        let samples = vec![
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 1.0],
        ];
        let w = importance_weights(&q, &q, 0..3, &samples).unwrap();
        for v in w {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_follow_ratio() {
        // q(1)/p(1) = 0.75/0.25 = 3, q(0)/p(0) = 0.25/0.75 = 1/3 -> (9, 1) normalized.
        let q = bern(&[0.75]);
        let p = bern(&[0.25]);
        let w = importance_weights(&q, &p, 0..1, &[vec![1.0], vec![0.0]]).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-12 && (w[1] - 0.1).abs() < 1e-12);

        // Ratio 3 : 1 -> (0.75, 0.25).
        let q = ProductDistribution::binary_sign(vec![0.75]).unwrap();
        let p = ProductDistribution::uniform_sign(1).unwrap();
        let w = importance_weights(&q, &p, 0..1, &[vec![1.0], vec![-1.0]]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_samples_never_selected() {
        let q = bern(&[1.0]);
        let p = bern(&[0.5]);
        for seed in 0..200 {
            let (mut sh, mut sel) = streams(seed);
            match encode_block(&q, &p, 0..1, 4, &mut sh, &mut sel) {
                Ok((_, y)) => assert_eq!(y, vec![1.0]),
                Err(Error::EmptySupport { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn all_zero_weights_is_an_error() {
        let q = bern(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let p = bern(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (mut sh, mut sel) = streams(1);
        // p = 0 never yields a 1, so every sample has zero q-mass.
        assert!(matches!(
            encode_block(&q, &p, 0..8, 8, &mut sh, &mut sel),
            Err(Error::EmptySupport { start: 0, samples: 8 })
        ));
    }

    #[test]
    fn single_sample_decodes_to_first_draw() {
        let p = ProductDistribution::gaussian(vec![0.0; 5], 1.0).unwrap();
        let (mut sh, _) = streams(3);
        let direct = p.sample(1..4, &mut sh.clone()).unwrap();
        assert_eq!(decode_block(&p, 1..4, 1, &mut sh, 0).unwrap(), direct);
        assert_eq!(sh.position(), 6);
    }

    #[test]
    fn index_out_of_range_rejected() {
        let p = bern(&[0.5]);
        let (mut sh, _) = streams(0);
        assert!(matches!(
            decode_block(&p, 0..1, 4, &mut sh, 4),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(decode_block(&p, 0..1, 0, &mut sh, 0).is_err());
        assert!(decode_block(&p, 0..2, 2, &mut sh, 0).is_err());
    }

    #[test]
    fn selection_frequencies_match_weights() {
        // Fixed samples, many selector draws: frequency of index 0 near pi(0).
        let q = bern(&[0.8, 0.8]);
        let p = bern(&[0.5, 0.5]);
        let samples = vec![vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]];
        let w = importance_weights(&q, &p, 0..2, &samples).unwrap();
        let mut sel = StreamKey::new(5).with("sel", 0).stream();
        let n = 100_000;
        let hits = (0..n).filter(|_| pick(&w, sel.next_uniform()) == 0).count();
        assert!((hits as f64 / n as f64 - w[0]).abs() < 0.01);
    }

    fn arb_block() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, u32, u64)> {
        (1usize..=16).prop_flat_map(|d| {
            (
                proptest::collection::vec(0.01f64..0.99, d),
                proptest::collection::vec(0.01f64..0.99, d),
                0u32..=6,
                any::<u64>(),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn bernoulli_round_trip((qp, pp, bits, seed) in arb_block()) {
            let (q, p) = (bern(&qp), bern(&pp));
            let d = qp.len();
            let k = 1u64 << bits;
            let (mut sh, mut sel) = streams(seed);
            let (idx, y) = encode_block(&q, &p, 0..d, k, &mut sh, &mut sel).unwrap();
            let (mut sh2, _) = streams(seed);
            prop_assert_eq!(decode_block(&p, 0..d, k, &mut sh2, idx).unwrap(), y);
            prop_assert_eq!(sh.position(), sh2.position());
        }

        #[test]
        fn weights_are_normalized(
            qp in proptest::collection::vec(0.01f64..0.99, 4),
            pp in proptest::collection::vec(0.01f64..0.99, 4),
            seed in any::<u64>(),
        ) {
            let (q, p) = (bern(&qp), bern(&pp));
            let mut s = StreamKey::new(seed).stream();
            let samples: Vec<_> = (0..32).map(|_| p.sample(0..4, &mut s).unwrap()).collect();
            let w = importance_weights(&q, &p, 0..4, &samples).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
