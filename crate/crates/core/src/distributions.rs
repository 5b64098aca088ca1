//! Factorized distributions used as the global reference `p` and the
//! client-only `q`.
//!
//! Discrete kinds are evaluated on symbols:
//! - `Bernoulli`: values `0.0` / `1.0`.
//! - `BinarySign`, `UniformSign`: values `-1.0` / `+1.0`.
//! - `Ternary`: sign patterns `-1.0` / `0.0` / `+1.0`. The magnitude `norm`
//!   travels separately; multiply a pattern by [`ProductDistribution::scale`]
//!   to obtain the quantized vector. Log-masses and KL are scale free.
//!
//! Values outside the support have zero mass: `log_mass` returns
//! `f64::NEG_INFINITY` for them instead of failing.
//!
//! All KL values are in nats.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::rng::SampleStream;

/// Probability triple over `(-1, 0, +1)`.
pub type Ternary = [f64; 3];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum DistributionKind {
    Bernoulli,
    Ternary,
    BinarySign,
    DiagonalGaussian,
    UniformSign,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProductDistribution {
    Bernoulli { probs: Vec<f64> },
    Ternary { probs: Vec<Ternary>, norm: f64 },
    BinarySign { p_pos: Vec<f64> },
    DiagonalGaussian { means: Vec<f64>, std: f64 },
    UniformSign { dim: usize },
}

fn check_prob(p: f64, what: &str, i: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "{what}[{i}] = {p} is not a probability"
        )));
    }
    Ok(())
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    Ok(())
}

impl ProductDistribution {
    pub fn bernoulli(probs: Vec<f64>) -> Result<Self> {
        check_dim(probs.len())?;
        for (i, &p) in probs.iter().enumerate() {
            check_prob(p, "probs", i)?;
        }
        Ok(Self::Bernoulli { probs })
    }

    pub fn ternary(probs: Vec<Ternary>, norm: f64) -> Result<Self> {
        check_dim(probs.len())?;
        if !(norm.is_finite() && norm >= 0.0) {
            return Err(Error::InvalidParameter(format!("norm {norm} must be finite and >= 0")));
        }
        for (i, t) in probs.iter().enumerate() {
            for &p in t {
                check_prob(p, "probs", i)?;
            }
            let s: f64 = t.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("probs[{i}] sums to {s}, expected 1")));
            }
        }
        Ok(Self::Ternary { probs, norm })
    }

    pub fn binary_sign(p_pos: Vec<f64>) -> Result<Self> {
        check_dim(p_pos.len())?;
        for (i, &p) in p_pos.iter().enumerate() {
            check_prob(p, "p_pos", i)?;
        }
        Ok(Self::BinarySign { p_pos })
    }

    pub fn gaussian(means: Vec<f64>, std: f64) -> Result<Self> {
        check_dim(means.len())?;
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::InvalidParameter(format!("std {std} must be > 0")));
        }
        if let Some(i) = means.iter().position(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter(format!("means[{i}] is not finite")));
        }
        Ok(Self::DiagonalGaussian { means, std })
    }

    pub fn uniform_sign(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self::UniformSign { dim })
    }

    pub fn kind(&self) -> DistributionKind {
        match self {
            Self::Bernoulli { .. } => DistributionKind::Bernoulli,
            Self::Ternary { .. } => DistributionKind::Ternary,
            Self::BinarySign { .. } => DistributionKind::BinarySign,
            Self::DiagonalGaussian { .. } => DistributionKind::DiagonalGaussian,
            Self::UniformSign { .. } => DistributionKind::UniformSign,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Bernoulli { probs } => probs.len(),
            Self::Ternary { probs, .. } => probs.len(),
            Self::BinarySign { p_pos } => p_pos.len(),
            Self::DiagonalGaussian { means, .. } => means.len(),
            Self::UniformSign { dim } => *dim,
        }
    }

    /// Magnitude multiplying sampled values: the norm for ternary patterns,
    /// 1 otherwise.
    pub fn scale(&self) -> f64 {
        match self {
            Self::Ternary { norm, .. } => *norm,
            _ => 1.0,
        }
    }

    /// Raw uniform draws consumed per sampled coordinate.
    pub fn draws_per_coordinate(&self) -> u64 {
        match self {
            Self::DiagonalGaussian { .. } => 2,
            _ => 1,
        }
    }

    fn check_range(&self, range: &Range<usize>) -> Result<()> {
        if range.start >= range.end || range.end > self.dim() {
            return Err(Error::Range {
                lo: range.start,
                hi: range.end,
                dim: self.dim(),
            });
        }
        Ok(())
    }

    /// Independent per-coordinate draws over `range`.
    pub fn sample(&self, range: Range<usize>, stream: &mut SampleStream) -> Result<Vec<f64>> {
        self.check_range(&range)?;
        let mut out = Vec::with_capacity(range.len());
        self.sample_into(range, stream, &mut out);
        Ok(out)
    }

    /// Appends draws for an already validated range.
    pub(crate) fn sample_into(&self, range: Range<usize>, stream: &mut SampleStream, out: &mut Vec<f64>) {
        match self {
            Self::Bernoulli { probs } => {
                out.extend(
                    probs[range]
                        .iter()
                        .map(|&p| if stream.next_uniform() < p { 1.0 } else { 0.0 }),
                );
            }
            Self::Ternary { probs, .. } => {
                out.extend(probs[range].iter().map(|t| {
                    let u = stream.next_uniform();
                    pick_ternary(u, t) as f64 - 1.0
                }));
            }
            Self::BinarySign { p_pos } => {
                out.extend(
                    p_pos[range]
                        .iter()
                        .map(|&p| if stream.next_uniform() < p { 1.0 } else { -1.0 }),
                );
            }
            Self::UniformSign { .. } => {
                out.extend(range.map(|_| if stream.next_uniform() < 0.5 { 1.0 } else { -1.0 }));
            }
            Self::DiagonalGaussian { means, std } => {
                out.extend(means[range].iter().map(|&m| m + std * stream.next_gaussian()));
            }
        }
    }

    /// Log-probability of coordinate `i` taking value `x`.
    fn coordinate_log_mass(&self, i: usize, x: f64) -> f64 {
        match self {
            Self::DiagonalGaussian { means, std } => {
                let z = (x - means[i]) / std;
                -0.5 * (std::f64::consts::TAU).ln() - std.ln() - 0.5 * z * z
            }
            _ => match self.symbol(x) {
                Some(sym) => self.symbol_probs(i)[sym].ln(),
                None => f64::NEG_INFINITY,
            },
        }
    }

    /// Sum of per-coordinate log-masses (log-density for Gaussians), nats.
    pub fn log_mass(&self, range: Range<usize>, x: &[f64]) -> Result<f64> {
        if range.start > range.end || range.end > self.dim() {
            return Err(Error::Range {
                lo: range.start,
                hi: range.end,
                dim: self.dim(),
            });
        }
        if x.len() != range.len() {
            return Err(Error::LengthMismatch {
                expected: range.len(),
                actual: x.len(),
            });
        }
        Ok(range.zip(x).map(|(i, &v)| self.coordinate_log_mass(i, v)).sum())
    }

    /// Symbol index of a discrete value, `None` if it is not in the support
    /// alphabet. Not meaningful for Gaussians.
    pub(crate) fn symbol(&self, x: f64) -> Option<usize> {
        match self {
            Self::Bernoulli { .. } => match x {
                v if v == 0.0 => Some(0),
                v if v == 1.0 => Some(1),
                _ => None,
            },
            Self::BinarySign { .. } | Self::UniformSign { .. } => match x {
                v if v == -1.0 => Some(0),
                v if v == 1.0 => Some(1),
                _ => None,
            },
            Self::Ternary { .. } => match x {
                v if v == -1.0 => Some(0),
                v if v == 0.0 => Some(1),
                v if v == 1.0 => Some(2),
                _ => None,
            },
            Self::DiagonalGaussian { .. } => None,
        }
    }

    /// Per-symbol probabilities of coordinate `i` (unused slots are 0).
    pub(crate) fn symbol_probs(&self, i: usize) -> [f64; 3] {
        match self {
            Self::Bernoulli { probs } => [1.0 - probs[i], probs[i], 0.0],
            Self::BinarySign { p_pos } => [1.0 - p_pos[i], p_pos[i], 0.0],
            Self::UniformSign { .. } => [0.5, 0.5, 0.0],
            Self::Ternary { probs, .. } => probs[i],
            Self::DiagonalGaussian { .. } => [0.0; 3],
        }
    }

    pub(crate) fn compatible(&self, p: &Self) -> Result<()> {
        use ProductDistribution as D;
        if self.dim() != p.dim() {
            return Err(Error::LengthMismatch {
                expected: p.dim(),
                actual: self.dim(),
            });
        }
        let ok = match (self, p) {
            (D::Bernoulli { .. }, D::Bernoulli { .. }) | (D::Ternary { .. }, D::Ternary { .. }) => true,
            (D::BinarySign { .. } | D::UniformSign { .. }, D::BinarySign { .. } | D::UniformSign { .. }) => true,
            (D::DiagonalGaussian { std: sq, .. }, D::DiagonalGaussian { std: sp, .. }) => {
                if (sq - sp).abs() > 1e-12 * sq.max(*sp) {
                    return Err(Error::Incompatible(format!(
                        "gaussian KL needs equal std, got {sq} and {sp}"
                    )));
                }
                true
            }
            _ => false,
        };
        if !ok {
            return Err(Error::Incompatible(format!("{:?} vs {:?}", self.kind(), p.kind())));
        }
        Ok(())
    }

    /// `KL(q_i || p_i)` for one coordinate; `self` is `q`. Assumes
    /// compatibility was checked.
    fn coordinate_kl(&self, p: &Self, i: usize) -> Result<f64> {
        if let (Self::DiagonalGaussian { means: mq, std }, Self::DiagonalGaussian { means: mp, .. }) = (self, p) {
            let d = mq[i] - mp[i];
            return Ok(d * d / (2.0 * std * std));
        }
        let (qs, ps) = (self.symbol_probs(i), p.symbol_probs(i));
        let mut kl = 0.0;
        for (&qv, &pv) in qs.iter().zip(&ps) {
            if qv == 0.0 {
                continue;
            }
            if pv == 0.0 {
                return Err(Error::AbsoluteContinuity { coordinate: i });
            }
            kl += qv * (qv / pv).ln();
        }
        Ok(kl.max(0.0))
    }

    /// Coordinate-wise `KL(self || p)` in nats.
    pub fn kl_per_coordinate(&self, p: &Self) -> Result<Vec<f64>> {
        self.compatible(p)?;
        (0..self.dim()).map(|i| self.coordinate_kl(p, i)).collect()
    }

    /// `KL(self || p)` restricted to `range`; empty ranges give 0.
    pub fn kl_block(&self, p: &Self, range: Range<usize>) -> Result<f64> {
        self.compatible(p)?;
        if range.start > range.end || range.end > self.dim() {
            return Err(Error::Range {
                lo: range.start,
                hi: range.end,
                dim: self.dim(),
            });
        }
        range.map(|i| self.coordinate_kl(p, i)).sum()
    }
}

/// Free-function form of [`ProductDistribution::kl_per_coordinate`].
pub fn kl_per_coordinate(q: &ProductDistribution, p: &ProductDistribution) -> Result<Vec<f64>> {
    q.kl_per_coordinate(p)
}

/// Free-function form of [`ProductDistribution::kl_block`].
pub fn kl_block(q: &ProductDistribution, p: &ProductDistribution, range: Range<usize>) -> Result<f64> {
    q.kl_block(p, range)
}

/// Inverse-CDF pick over three symbols. Rounding can leave `u` above the
/// cumulative sum; the last symbol with positive mass is returned then.
fn pick_ternary(u: f64, t: &Ternary) -> usize {
    if u < t[0] {
        0
    } else if u < t[0] + t[1] {
        1
    } else if t[2] > 0.0 {
        2
    } else if t[1] > 0.0 {
        1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use proptest::prelude::*;

    fn stream(tag: u64) -> SampleStream {
        StreamKey::new(99).with("test", tag).stream()
    }

    #[test]
    fn degenerate_bernoulli_samples_ones() {
        let d = ProductDistribution::bernoulli(vec![1.0; 8]).unwrap();
        assert_eq!(d.sample(2..7, &mut stream(0)).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn uniform_sign_fraction() {
        let d = ProductDistribution::uniform_sign(100_000).unwrap();
        let x = d.sample(0..100_000, &mut stream(1)).unwrap();
        let frac = x.iter().filter(|&&v| v == 1.0).count() as f64 / 1e5;
        assert!((0.497..=0.503).contains(&frac), "{frac}");
    }

    #[test]
    fn gaussian_sample_mean() {
        let d = ProductDistribution::gaussian(vec![0.8; 100_000], 1.0).unwrap();
        let x = d.sample(0..100_000, &mut stream(2)).unwrap();
        let mean = x.iter().sum::<f64>() / 1e5;
        assert!((0.79..=0.81).contains(&mean), "{mean}");
    }

    #[test]
    fn invalid_range_rejected() {
        let d = ProductDistribution::uniform_sign(4).unwrap();
        assert!(matches!(d.sample(3..3, &mut stream(3)), Err(Error::Range { .. })));
        assert!(matches!(d.sample(2..5, &mut stream(3)), Err(Error::Range { .. })));
    }

    #[test]
    fn log_mass_examples() {
        let fair = ProductDistribution::bernoulli(vec![0.5, 0.5]).unwrap();
        assert!((fair.log_mass(0..2, &[0.0, 1.0]).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let b = ProductDistribution::bernoulli(vec![0.9]).unwrap();
        assert!((b.log_mass(0..1, &[1.0]).unwrap() - (-0.105_360_515_657_826_3)).abs() < 1e-12);
        let g = ProductDistribution::gaussian(vec![0.0], 1.0).unwrap();
        assert!((g.log_mass(0..1, &[0.0]).unwrap() - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn log_mass_outside_support_is_neg_inf() {
        let b = ProductDistribution::bernoulli(vec![1.0]).unwrap();
        assert_eq!(b.log_mass(0..1, &[0.0]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(b.log_mass(0..1, &[0.5]).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(
            b.log_mass(0..1, &[1.0, 1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn kl_examples() {
        let q = ProductDistribution::bernoulli(vec![0.9, 0.9]).unwrap();
        let p = ProductDistribution::bernoulli(vec![0.5, 0.5]).unwrap();
        let expected = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        let kl = q.kl_per_coordinate(&p).unwrap();
        assert!((kl[0] - expected).abs() < 1e-12);
        assert!((expected - 0.3681).abs() < 1e-4);
        assert!((q.kl_block(&p, 0..2).unwrap() - 2.0 * expected).abs() < 1e-12);
        assert_eq!(q.kl_block(&p, 1..1).unwrap(), 0.0);

        let gq = ProductDistribution::gaussian(vec![0.8], 1.0).unwrap();
        let gp = ProductDistribution::gaussian(vec![0.0], 1.0).unwrap();
        assert!((gq.kl_per_coordinate(&gp).unwrap()[0] - 0.32).abs() < 1e-12);
    }

    #[test]
    fn kl_self_is_zero() {
        let cases = vec![
            ProductDistribution::bernoulli(vec![0.0, 0.3, 1.0]).unwrap(),
            ProductDistribution::ternary(vec![[0.2, 0.5, 0.3], [0.0, 1.0, 0.0], [0.1, 0.1, 0.8]], 2.0).unwrap(),
            ProductDistribution::binary_sign(vec![0.1, 0.5, 0.9]).unwrap(),
            ProductDistribution::uniform_sign(3).unwrap(),
            ProductDistribution::gaussian(vec![1.0, -2.0, 0.0], 0.5).unwrap(),
        ];
        for d in cases {
            assert_eq!(d.kl_per_coordinate(&d).unwrap(), vec![0.0; 3], "{:?}", d.kind());
        }
    }

    #[test]
    fn kl_errors() {
        let b = ProductDistribution::bernoulli(vec![0.5]).unwrap();
        let s = ProductDistribution::uniform_sign(1).unwrap();
        assert!(matches!(b.kl_per_coordinate(&s), Err(Error::Incompatible(_))));
        let b2 = ProductDistribution::bernoulli(vec![0.5, 0.5]).unwrap();
        assert!(matches!(b.kl_per_coordinate(&b2), Err(Error::LengthMismatch { .. })));
        let p0 = ProductDistribution::bernoulli(vec![0.0]).unwrap();
        assert!(matches!(
            b.kl_per_coordinate(&p0),
            Err(Error::AbsoluteContinuity { coordinate: 0 })
        ));
        // q = 0 where p = 0 is fine
        assert_eq!(p0.kl_per_coordinate(&p0).unwrap(), vec![0.0]);
        let g1 = ProductDistribution::gaussian(vec![0.0], 1.0).unwrap();
        let g2 = ProductDistribution::gaussian(vec![0.0], 2.0).unwrap();
        assert!(matches!(g1.kl_per_coordinate(&g2), Err(Error::Incompatible(_))));
    }

    #[test]
    fn ternary_validation() {
        assert!(ProductDistribution::ternary(vec![[0.5, 0.5, 0.1]], 1.0).is_err());
        assert!(ProductDistribution::ternary(vec![[0.5, 0.5, 0.0]], -1.0).is_err());
        assert!(ProductDistribution::bernoulli(vec![]).is_err());
        assert!(ProductDistribution::bernoulli(vec![1.5]).is_err());
    }

    /// Every point of `{alphabet}^d` in lexicographic order.
    fn enumerate(alphabet: &[f64], d: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![]];
        for _ in 0..d {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    alphabet.iter().map(move |&a| {
                        let mut v = prefix.clone();
                        v.push(a);
                        v
                    })
                })
                .collect();
        }
        out
    }

    fn ternary_strategy(d: usize) -> impl Strategy<Value = Vec<Ternary>> {
        proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), d).prop_map(|v| {
            v.into_iter()
                .map(|(a, b, c)| {
                    let s = a + b + c + 1e-9;
                    let (a, b) = (a / s, b / s);
                    [a, b, 1.0 - a - b]
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bernoulli_mass_sums_to_one(probs in proptest::collection::vec(0.0f64..=1.0, 1..=12)) {
            let d = probs.len();
            let dist = ProductDistribution::bernoulli(probs).unwrap();
            let total: f64 = enumerate(&[0.0, 1.0], d)
                .iter()
                .map(|x| dist.log_mass(0..d, x).unwrap().exp())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn ternary_mass_sums_to_one(probs in (1usize..=7).prop_flat_map(ternary_strategy)) {
            let d = probs.len();
            let dist = ProductDistribution::ternary(probs, 3.0).unwrap();
            let total: f64 = enumerate(&[-1.0, 0.0, 1.0], d)
                .iter()
                .map(|x| dist.log_mass(0..d, x).unwrap().exp())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn bernoulli_kl_matches_enumeration(
            pairs in proptest::collection::vec((0.0f64..=1.0, 0.01f64..=0.99), 1..=8)
        ) {
            let d = pairs.len();
            let q = ProductDistribution::bernoulli(pairs.iter().map(|p| p.0).collect()).unwrap();
            let p = ProductDistribution::bernoulli(pairs.iter().map(|p| p.1).collect()).unwrap();
            let brute: f64 = enumerate(&[0.0, 1.0], d)
                .iter()
                .map(|x| {
                    let lq = q.log_mass(0..d, x).unwrap();
                    if lq == f64::NEG_INFINITY { 0.0 } else { lq.exp() * (lq - p.log_mass(0..d, x).unwrap()) }
                })
                .sum();
            let kl = q.kl_block(&p, 0..d).unwrap();
            prop_assert!((kl - brute).abs() < 1e-9, "{} vs {}", kl, brute);
            prop_assert!(q.kl_per_coordinate(&p).unwrap().iter().all(|&v| v >= -1e-12));
        }

        #[test]
        fn ternary_kl_matches_enumeration_and_is_scale_free(
            qp in (1usize..=5).prop_flat_map(|d| (ternary_strategy(d), ternary_strategy(d))),
            scale in 0.01f64..100.0,
        ) {
            let (qs, ps) = qp;
            let d = qs.len();
            // keep p strictly positive for absolute continuity
            let ps: Vec<Ternary> = ps.iter().map(|t| {
                let s: f64 = t.iter().map(|v| v + 0.01).sum();
                let (a, b) = ((t[0] + 0.01) / s, (t[1] + 0.01) / s);
                [a, b, 1.0 - a - b]
            }).collect();
            let q = ProductDistribution::ternary(qs.clone(), 1.0).unwrap();
            let q_scaled = ProductDistribution::ternary(qs, scale).unwrap();
            let p = ProductDistribution::ternary(ps, 1.0).unwrap();
            let brute: f64 = enumerate(&[-1.0, 0.0, 1.0], d)
                .iter()
                .map(|x| {
                    let lq = q.log_mass(0..d, x).unwrap();
                    if lq == f64::NEG_INFINITY { 0.0 } else { lq.exp() * (lq - p.log_mass(0..d, x).unwrap()) }
                })
                .sum();
            prop_assert!((q.kl_block(&p, 0..d).unwrap() - brute).abs() < 1e-9);
            prop_assert_eq!(q.kl_per_coordinate(&p).unwrap(), q_scaled.kl_per_coordinate(&p).unwrap());
        }
    }
}
