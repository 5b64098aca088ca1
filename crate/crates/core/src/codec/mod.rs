//! KLMS encoder/decoder.
//!
//! The model vector is cut into contiguous blocks ([`BlockPartition`]). For
//! each block, encoder and decoder derive the same `K` samples from the
//! global distribution `p` with a shared-seed stream; the encoder picks one
//! with probability proportional to `q(y)/p(y)` and transmits its index.
//! All blocks of a message use the same index width, set by the target
//! block KL (see [`CodecParams::bits_per_index`]).

mod bits;
mod params;
mod partition;
mod sampler;
mod update;
mod wire;

pub use params::{samples_per_block, should_update_partition, CodecParams, MAX_INDEX_BITS};
pub use partition::{aggregate_block_locations, split_blocks_adaptive, split_blocks_fixed, BlockPartition};
pub use sampler::{decode_block, encode_block, importance_weights};
pub use update::{decode_update, encode_update, BitCost, EncodeOutput, MessageHeader};
pub use wire::{deserialize, serialize, EncodedUpdate, HEADER_BITS};

pub(crate) fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}
