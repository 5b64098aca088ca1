//! Bit-exact message layout, MSB first, zero-padded to a whole byte:
//!
//! ```text
//! round        32
//! client_id    32
//! flags         8   bit 0: block lengths included
//! avg_block_kl 32   IEEE-754 binary32
//! M            32   number of blocks
//! lengths      M x ceil(log2 max_block_size)   only if flag bit 0; stores len - 1
//! indices      M x bits_per_index
//! ```

use crate::codec::bits::{BitReader, BitWriter};
use crate::codec::CodecParams;
use crate::error::{Error, Result};

/// Fixed header size in bits: round, client id, flags, average KL and M.
pub const HEADER_BITS: u64 = 32 + 32 + 8 + 32 + 32;

const FLAG_LOCATIONS: u8 = 0x01;

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedUpdate {
    pub round: u32,
    pub client_id: u32,
    pub avg_block_kl: f32,
    /// Present iff the message carries a new partition.
    pub block_lengths: Option<Vec<u32>>,
    pub indices: Vec<u64>,
}

impl EncodedUpdate {
    pub fn includes_locations(&self) -> bool {
        self.block_lengths.is_some()
    }

    pub fn num_blocks(&self) -> usize {
        self.indices.len()
    }

    /// Exact serialized size in bits before byte padding.
    pub fn bit_len(&self, params: &CodecParams) -> u64 {
        let m = self.num_blocks() as u64;
        let loc = if self.includes_locations() {
            m * u64::from(params.location_field_bits())
        } else {
            0
        };
        HEADER_BITS + loc + m * u64::from(params.bits_per_index())
    }
}

pub fn serialize(upd: &EncodedUpdate, params: &CodecParams) -> Result<Vec<u8>> {
    let m = upd.num_blocks();
    if m > u32::MAX as usize {
        return Err(Error::InvalidParameter(format!(
            "{m} blocks do not fit the 32-bit count"
        )));
    }
    let bits = params.bits_per_index();
    let k = 1u64 << bits;
    let loc_bits = params.location_field_bits();

    let mut w = BitWriter::with_capacity_bits(upd.bit_len(params));
    w.write(u64::from(upd.round), 32);
    w.write(u64::from(upd.client_id), 32);
    w.write(
        if upd.includes_locations() {
            u64::from(FLAG_LOCATIONS)
        } else {
            0
        },
        8,
    );
    w.write(u64::from(upd.avg_block_kl.to_bits()), 32);
    w.write(m as u64, 32);
    if let Some(lengths) = &upd.block_lengths {
        if lengths.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: lengths.len(),
            });
        }
        for (b, &len) in lengths.iter().enumerate() {
            if len == 0 || len as usize > params.max_block_size {
                return Err(Error::InvalidParameter(format!(
                    "block {b} length {len} outside 1..={}",
                    params.max_block_size
                )));
            }
            w.write(u64::from(len - 1), loc_bits);
        }
    }
    for (block, &index) in upd.indices.iter().enumerate() {
        if index >= k {
            return Err(Error::IndexOutOfRange { block, index, k });
        }
        w.write(index, bits);
    }
    debug_assert_eq!(w.bit_len(), upd.bit_len(params));
    Ok(w.finish())
}

/// Strict inverse of [`serialize`]: rejects truncated or overlong input,
/// unknown flag bits and nonzero padding.
pub fn deserialize(bytes: &[u8], params: &CodecParams) -> Result<EncodedUpdate> {
    let mut r = BitReader::new(bytes);
    let round = r.read(32)? as u32;
    let client_id = r.read(32)? as u32;
    let flags = r.read(8)? as u8;
    if flags & !FLAG_LOCATIONS != 0 {
        return Err(Error::parse(8, format!("unknown flag bits {flags:#04x}")));
    }
    let avg_block_kl = f32::from_bits(r.read(32)? as u32);
    let m = r.read(32)?;

    let bits = params.bits_per_index();
    let loc_bits = if flags & FLAG_LOCATIONS != 0 {
        params.location_field_bits()
    } else {
        0
    };
    let body = m * u64::from(bits + loc_bits);
    let expected_bytes = (HEADER_BITS + body).div_ceil(8);
    if (bytes.len() as u64) < expected_bytes {
        return Err(Error::parse(
            bytes.len(),
            format!(
                "truncated: {M} blocks need {expected_bytes} bytes, got {}",
                bytes.len(),
                M = m
            ),
        ));
    }
    if bytes.len() as u64 > expected_bytes {
        return Err(Error::parse(
            expected_bytes as usize,
            format!("{} trailing bytes", bytes.len() as u64 - expected_bytes),
        ));
    }

    let block_lengths = if flags & FLAG_LOCATIONS != 0 {
        let mut lengths = Vec::with_capacity(m as usize);
        for _ in 0..m {
            let offset = r.byte_offset();
            let len = r.read(loc_bits)? + 1;
            if len as usize > params.max_block_size {
                return Err(Error::parse(
                    offset,
                    format!("block length {len} exceeds max_block_size {}", params.max_block_size),
                ));
            }
            lengths.push(len as u32);
        }
        Some(lengths)
    } else {
        None
    };
    let mut indices = Vec::with_capacity(m as usize);
    for _ in 0..m {
        indices.push(r.read(bits)?);
    }
    let pad_offset = r.byte_offset();
    let pad = r.remaining_bits() as u32;
    if r.read(pad)? != 0 {
        return Err(Error::parse(pad_offset, "nonzero padding bits"));
    }
    debug_assert_eq!(r.bit_position(), expected_bytes * 8);
    Ok(EncodedUpdate {
        round,
        client_id,
        avg_block_kl,
        block_lengths,
        indices,
    })
}
