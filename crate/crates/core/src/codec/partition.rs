use std::ops::Range;

use crate::codec::CodecParams;
use crate::error::{Error, Result};

/// Contiguous, disjoint blocks covering `[0, dim)`, stored as start indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    starts: Vec<usize>,
    dim: usize,
}

impl BlockPartition {
    pub fn new(starts: Vec<usize>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("partition dimension must be >= 1".into()));
        }
        if starts.first() != Some(&0) {
            return Err(Error::InvalidParameter("partition must start at 0".into()));
        }
        if starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "block starts must be strictly increasing".into(),
            ));
        }
        if *starts.last().unwrap() >= dim {
            return Err(Error::InvalidParameter(format!(
                "last block start {} must be below dimension {dim}",
                starts.last().unwrap()
            )));
        }
        Ok(Self { starts, dim })
    }

    /// Rebuilds starts from block lengths by prefix sums; the lengths must
    /// add up to `dim`.
    pub fn from_lengths(lengths: &[usize], dim: usize) -> Result<Self> {
        let total: usize = lengths.iter().sum();
        if total != dim {
            return Err(Error::InvalidParameter(format!(
                "block lengths sum to {total}, dimension is {dim}"
            )));
        }
        if lengths.contains(&0) {
            return Err(Error::InvalidParameter("block lengths must be >= 1".into()));
        }
        let mut starts = Vec::with_capacity(lengths.len());
        let mut acc = 0;
        for &len in lengths {
            starts.push(acc);
            acc += len;
        }
        Self::new(starts, dim)
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.starts.len()
    }

    pub fn block(&self, m: usize) -> Range<usize> {
        let end = self.starts.get(m + 1).copied().unwrap_or(self.dim);
        self.starts[m]..end
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_blocks()).map(move |m| self.block(m))
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.ranges().map(|r| r.len()).collect()
    }

    pub fn max_len(&self) -> usize {
        self.ranges().map(|r| r.len()).max().unwrap_or(0)
    }

    pub fn check_cap(&self, max_block_size: usize) -> Result<()> {
        if let Some((m, r)) = self.ranges().enumerate().find(|(_, r)| r.len() > max_block_size) {
            return Err(Error::InvalidParameter(format!(
                "block {m} has length {} above max_block_size {max_block_size}",
                r.len()
            )));
        }
        Ok(())
    }
}

/// `ceil(d / size)` blocks of `size` coordinates, the last possibly shorter.
pub fn split_blocks_fixed(dim: usize, size: usize) -> Result<BlockPartition> {
    if size == 0 {
        return Err(Error::InvalidParameter("block size must be >= 1".into()));
    }
    BlockPartition::new((0..dim).step_by(size).collect(), dim)
}

/// Greedy left-to-right split: a block closes at the first coordinate where
/// its running KL reaches `d_kl_target`, or when it holds `max_block_size`
/// coordinates. The final block may stay below target.
pub fn split_blocks_adaptive(kl: &[f64], params: &CodecParams) -> Result<BlockPartition> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if let Some(i) = kl.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("kl[{i}] = {} is not >= 0", kl[i])));
    }
    if params.max_block_size == 0 {
        return Err(Error::InvalidParameter("max_block_size must be >= 1".into()));
    }
    let mut starts = vec![0];
    let (mut sum, mut len) = (0.0, 0);
    for (i, &v) in kl.iter().enumerate() {
        sum += v;
        len += 1;
        if (sum >= params.d_kl_target || len == params.max_block_size) && i + 1 < kl.len() {
            starts.push(i + 1);
            sum = 0.0;
            len = 0;
        }
    }
    BlockPartition::new(starts, kl.len())
}

/// Server-side merge of client partitions: the m-th start is the ceiling of
/// the mean of the m-th starts of the clients that have one. The raw result
/// is then repaired: starts that do not increase are dropped, and blocks
/// longer than `max_block_size` are split at multiples of it.
pub fn aggregate_block_locations(
    client_partitions: &[BlockPartition],
    max_block_size: usize,
) -> Result<BlockPartition> {
    let first = client_partitions
        .first()
        .ok_or_else(|| Error::InvalidParameter("no client partitions to aggregate".into()))?;
    let dim = first.dim();
    if let Some(p) = client_partitions.iter().find(|p| p.dim() != dim) {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: p.dim(),
        });
    }
    if max_block_size == 0 {
        return Err(Error::InvalidParameter("max_block_size must be >= 1".into()));
    }
    let longest = client_partitions.iter().map(|p| p.num_blocks()).max().unwrap_or(0);
    let mut raw = Vec::with_capacity(longest);
    for m in 0..longest {
        let (sum, count) = client_partitions
            .iter()
            .filter_map(|p| p.starts().get(m))
            .fold((0u128, 0u128), |(s, c), &v| (s + v as u128, c + 1));
        raw.push(sum.div_ceil(count) as usize);
    }

    let mut starts: Vec<usize> = Vec::with_capacity(raw.len());
    for s in raw {
        if s < dim && starts.last().is_none_or(|&prev| s > prev) {
            starts.push(s);
        }
    }
    let mut capped = Vec::with_capacity(starts.len());
    for (m, &s) in starts.iter().enumerate() {
        let end = starts.get(m + 1).copied().unwrap_or(dim);
        capped.extend((s..end).step_by(max_block_size));
    }
    BlockPartition::new(capped, dim)
}
