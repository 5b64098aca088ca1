use rayon::prelude::*;

use crate::codec::wire::{EncodedUpdate, HEADER_BITS};
use crate::codec::{decode_block, encode_block, BlockPartition, CodecParams};
use crate::distributions::ProductDistribution;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Identifies a message; both fields go into the wire header.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageHeader {
    pub round: u32,
    pub client_id: u32,
}

/// Bits spent by one message. `dim` is the model dimension used for bpp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BitCost {
    pub payload_bits: u64,
    pub location_bits: u64,
    pub header_bits: u64,
    pub dim: usize,
}

impl BitCost {
    pub fn total(&self) -> u64 {
        self.payload_bits + self.location_bits + self.header_bits
    }

    pub fn bpp(&self) -> f64 {
        self.total() as f64 / self.dim as f64
    }

    pub fn payload_bpp(&self) -> f64 {
        self.payload_bits as f64 / self.dim as f64
    }
}

#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub update: EncodedUpdate,
    pub cost: BitCost,
    /// The selected samples, concatenated; what the decoder will rebuild.
    pub samples: Vec<f64>,
}

fn block_keys(key_base: &StreamKey, m: usize) -> (StreamKey, StreamKey) {
    (key_base.child("block", m as u64), key_base.child("select", m as u64))
}

/// Encodes a whole vector block by block. Block `m` draws its samples from
/// `key_base + ("block", m)` and its selection uniform from
/// `key_base + ("select", m)`. Every block uses `params.samples_per_index()`
/// samples regardless of its realized KL.
pub fn encode_update(
    q: &ProductDistribution,
    p: &ProductDistribution,
    partition: &BlockPartition,
    params: &CodecParams,
    key_base: &StreamKey,
    header: MessageHeader,
    include_locations: bool,
) -> Result<EncodeOutput> {
    if q.dim() != partition.dim() || p.dim() != partition.dim() {
        return Err(Error::LengthMismatch {
            expected: partition.dim(),
            actual: if q.dim() != partition.dim() { q.dim() } else { p.dim() },
        });
    }
    let kl = q.kl_per_coordinate(p)?;
    if include_locations {
        partition.check_cap(params.max_block_size)?;
    }
    let bits = params.bits_per_index();
    let k = params.samples_per_index();

    let blocks: Vec<(u64, Vec<f64>)> = (0..partition.num_blocks())
        .into_par_iter()
        .map(|m| {
            let (shared_key, select_key) = block_keys(key_base, m);
            encode_block(
                q,
                p,
                partition.block(m),
                k,
                &mut shared_key.stream(),
                &mut select_key.stream(),
            )
        })
        .collect::<Result<_>>()?;

    let m = partition.num_blocks();
    let block_kl_sum: f64 = partition.ranges().map(|r| kl[r].iter().sum::<f64>()).sum();
    let mut samples = Vec::with_capacity(partition.dim());
    let mut indices = Vec::with_capacity(m);
    for (index, y) in blocks {
        indices.push(index);
        samples.extend(y);
    }
    let update = EncodedUpdate {
        round: header.round,
        client_id: header.client_id,
        avg_block_kl: (block_kl_sum / m as f64) as f32,
        block_lengths: include_locations.then(|| partition.lengths().iter().map(|&l| l as u32).collect()),
        indices,
    };
    let cost = BitCost {
        payload_bits: m as u64 * u64::from(bits),
        location_bits: if include_locations {
            m as u64 * u64::from(params.location_field_bits())
        } else {
            0
        },
        header_bits: HEADER_BITS,
        dim: partition.dim(),
    };
    Ok(EncodeOutput { update, cost, samples })
}

/// Rebuilds the selected samples. If the message carries block lengths the
/// partition is rebuilt from them first; `partition` then only supplies the
/// dimension.
pub fn decode_update(
    p: &ProductDistribution,
    partition: &BlockPartition,
    params: &CodecParams,
    key_base: &StreamKey,
    upd: &EncodedUpdate,
) -> Result<Vec<f64>> {
    if p.dim() != partition.dim() {
        return Err(Error::LengthMismatch {
            expected: partition.dim(),
            actual: p.dim(),
        });
    }
    let rebuilt;
    let partition = match &upd.block_lengths {
        Some(lengths) => {
            let lengths: Vec<usize> = lengths.iter().map(|&l| l as usize).collect();
            rebuilt = BlockPartition::from_lengths(&lengths, partition.dim())?;
            &rebuilt
        }
        None => partition,
    };
    if upd.indices.len() != partition.num_blocks() {
        return Err(Error::LengthMismatch {
            expected: partition.num_blocks(),
            actual: upd.indices.len(),
        });
    }
    let k = params.samples_per_index();
    if let Some((block, &index)) = upd.indices.iter().enumerate().find(|(_, &i)| i >= k) {
        return Err(Error::IndexOutOfRange { block, index, k });
    }
    let blocks: Vec<Vec<f64>> = upd
        .indices
        .par_iter()
        .enumerate()
        .map(|(m, &index)| {
            let (shared_key, _) = block_keys(key_base, m);
            decode_block(p, partition.block(m), k, &mut shared_key.stream(), index)
        })
        .collect::<Result<_>>()?;
    Ok(blocks.concat())
}
