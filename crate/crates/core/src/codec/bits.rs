//! MSB-first bit packing.

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub(crate) fn with_capacity_bits(bits: u64) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8) as usize),
            len: 0,
        }
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub(crate) fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0);
        for i in (0..width).rev() {
            let bit = (value >> i) & 1;
            let offset = (self.len % 8) as u32;
            if offset == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().unwrap() |= 0x80 >> offset;
            }
            self.len += 1;
        }
    }

    pub(crate) fn bit_len(&self) -> u64 {
        self.len
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

pub(crate) struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn byte_offset(&self) -> usize {
        (self.pos / 8) as usize
    }

    pub(crate) fn bit_position(&self) -> u64 {
        self.pos
    }

    pub(crate) fn remaining_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8 - self.pos
    }

    pub(crate) fn read(&mut self, width: u32) -> Result<u64> {
        if u64::from(width) > self.remaining_bits() {
            return Err(Error::parse(
                self.bytes.len(),
                format!("truncated: needed {width} more bits at bit {}", self.pos),
            ));
        }
        let mut v = 0u64;
        for _ in 0..width {
            let byte = self.bytes[(self.pos / 8) as usize];
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            v = (v << 1) | u64::from(bit);
            self.pos += 1;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_layout() {
        let mut w = BitWriter::default();
        w.write(0b101, 3);
        w.write(0xFF, 8);
        w.write(0, 1);
        assert_eq!(w.bit_len(), 12);
        assert_eq!(w.finish(), vec![0b1011_1111, 0b1110_0000]);
    }

    #[test]
    fn round_trip_and_truncation() {
        let mut w = BitWriter::default();
        let fields = [(7u64, 3u32), (0, 0), (u64::MAX, 64), (12345, 17), (1, 1)];
        for &(v, n) in &fields {
            w.write(v, n);
        }
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        for &(v, n) in &fields {
            assert_eq!(r.read(n).unwrap(), v);
        }
        assert_eq!(r.remaining_bits(), 3);
        assert!(matches!(r.read(4), Err(Error::Parse { offset: 11, .. })));
    }
}
