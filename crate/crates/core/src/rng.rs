//! Keyed counter-based random streams.
//!
//! A [`StreamKey`] is a root seed plus an ordered list of `(tag, value)`
//! labels such as `[("round", 3), ("client", 7), ("block", 12)]`. The key is
//! hashed into two 64-bit words; draw `i` of the stream is a bijective mix of
//! `i` keyed by those words. Draws therefore depend only on the key and the
//! draw index, so a decoder can jump straight to the samples it needs and
//! results never depend on which worker evaluated which stream.
//!
//! Output transforms (frozen, encoder and decoder must agree bit for bit):
//! - uniform: top 53 bits of a draw times `2^-53`, in `[0, 1)`.
//! - gaussian: Box-Muller cosine branch on two consecutive uniforms,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`. Always consumes exactly two draws.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_SALT: u64 = 0x243F_6A88_85A3_08D3;
const SECOND_KEY_SALT: u64 = 0x1319_8A2E_0370_7344;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    root_seed: u64,
    labels: Vec<(String, u64)>,
}

impl StreamKey {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            labels: Vec::new(),
        }
    }

    /// Appends a label, builder style.
    pub fn with(mut self, tag: &str, value: u64) -> Self {
        self.labels.push((tag.to_owned(), value));
        self
    }

    /// Returns a copy of this key with one more label.
    pub fn child(&self, tag: &str, value: u64) -> Self {
        self.clone().with(tag, value)
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn labels(&self) -> &[(String, u64)] {
        &self.labels
    }

    pub fn stream(&self) -> SampleStream {
        derive_stream(self)
    }

    fn digest(&self) -> (u64, u64) {
        let mut h = mix64(self.root_seed ^ SEED_SALT);
        for (tag, value) in &self.labels {
            h = mix64(h ^ fnv1a64(tag.as_bytes()));
            h = mix64(h.wrapping_add(value.wrapping_mul(GOLDEN)) ^ SEED_SALT);
        }
        h = mix64(h ^ self.labels.len() as u64);
        (h, mix64(h ^ SECOND_KEY_SALT))
    }
}

/// Builds the stream for `key`. Two calls with equal keys give identical
/// streams.
pub fn derive_stream(key: &StreamKey) -> SampleStream {
    let (k0, k1) = key.digest();
    SampleStream { k0, k1, counter: 0 }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleStream {
    k0: u64,
    k1: u64,
    counter: u64,
}

impl SampleStream {
    /// Number of raw draws consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Moves to an absolute draw index.
    pub fn seek(&mut self, position: u64) {
        self.counter = position;
    }

    pub fn next_u64(&mut self) -> u64 {
        let i = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(i.wrapping_mul(GOLDEN) ^ self.k0) ^ self.k1)
    }

    /// Uniform in `[0, 1)`; one draw.
    pub fn next_uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Standard normal; two draws.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)` by multiply-shift; one draw.
    pub fn next_below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// Next-uniform as a free function, mirroring [`SampleStream::next_uniform`].
pub fn next_uniform(stream: &mut SampleStream) -> f64 {
    stream.next_uniform()
}

/// Next-gaussian as a free function, mirroring [`SampleStream::next_gaussian`].
pub fn next_gaussian(stream: &mut SampleStream) -> f64 {
    stream.next_gaussian()
}

/// In-place Fisher-Yates shuffle driven by `stream`.
pub fn shuffle<T>(items: &mut [T], stream: &mut SampleStream) {
    for i in (1..items.len()).rev() {
        let j = stream.next_below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(seed: u64, round: u64) -> StreamKey {
        StreamKey::new(seed).with("round", round).with("client", 0)
    }

    fn draws(key: &StreamKey, n: usize) -> Vec<u64> {
        let mut s = key.stream();
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn same_key_same_draws() {
        let k = key(7, 1);
        assert_eq!(draws(&k, 10_000), draws(&k.clone(), 10_000));
    }

    #[test]
    fn label_and_seed_change_stream() {
        assert_ne!(
            StreamKey::new(7).with("round", 1).stream().next_u64(),
            StreamKey::new(7).with("round", 2).stream().next_u64()
        );
        assert_ne!(draws(&key(7, 1), 1), draws(&key(8, 1), 1));
        // label order matters
        let ab = StreamKey::new(1).with("a", 1).with("b", 2);
        let ba = StreamKey::new(1).with("b", 2).with("a", 1);
        assert_ne!(draws(&ab, 4), draws(&ba, 4));
    }

    #[test]
    fn evaluation_order_does_not_matter() {
        let (ka, kb) = (key(3, 1), key(3, 2));
        let (mut a1, mut b1) = (ka.stream(), kb.stream());
        let first: Vec<f64> = (0..100).map(|_| a1.next_uniform()).collect();
        let second: Vec<f64> = (0..100).map(|_| b1.next_uniform()).collect();
        let (mut a2, mut b2) = (ka.stream(), kb.stream());
        let mut first2 = Vec::new();
        let mut second2 = Vec::new();
        for _ in 0..100 {
            second2.push(b2.next_uniform());
            first2.push(a2.next_uniform());
        }
        assert_eq!(first, first2);
        assert_eq!(second, second2);
    }

    #[test]
    fn seek_replays_draws() {
        let mut s = key(1, 1).stream();
        let all: Vec<u64> = (0..50).map(|_| s.next_u64()).collect();
        s.seek(20);
        assert_eq!(s.next_u64(), all[20]);
        assert_eq!(s.position(), 21);
    }

    #[test]
    fn uniform_moments() {
        let mut s = key(11, 0).stream();
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = s.next_uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((0.498..=0.502).contains(&mean), "mean {mean}");
    }

    #[test]
    fn gaussian_moments() {
        let mut s = key(12, 0).stream();
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.next_gaussian();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() <= 0.005, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn distinct_keys_are_uncorrelated() {
        let (mut a, mut b) = (key(5, 1).stream(), key(5, 2).stream());
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| a.next_gaussian()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.next_gaussian()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let rho = sxy / (sxx * syy).sqrt();
        assert!(rho.abs() <= 0.02, "rho {rho}");
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..100).collect();
        shuffle(&mut v, &mut key(2, 2).stream());
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
