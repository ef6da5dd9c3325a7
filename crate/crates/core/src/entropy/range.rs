//! Byte-oriented range coder with carry propagation.
//!
//! 64-bit low accumulator, 32-bit range, renormalized one byte at a time so
//! the range never drops below 2^24. The first output byte is the encoder's
//! initial zero cache; the decoder skips it. Encoder and decoder walk the
//! identical range sequence, so a well-formed stream is consumed exactly and
//! a truncated one is detected as a read past the end.

use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
/// Cumulative totals above this would start costing measurable precision.
const MAX_TOTAL: u32 = 1 << 22;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Encode one symbol occupying the cumulative slice [cum_lo, cum_hi) of
    /// `total`.
    pub fn encode(&mut self, cum_lo: u32, cum_hi: u32, total: u32) {
        debug_assert!(cum_lo < cum_hi && cum_hi <= total);
        debug_assert!((1..=MAX_TOTAL).contains(&total));
        let r = self.range / total;
        self.low += (r as u64) * (cum_lo as u64);
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    /// Encode `bits` raw bits of `value` (MSB first) under uniform models,
    /// in chunks of at most 16 bits.
    pub fn encode_raw(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= 32);
        let mut remaining = bits;
        while remaining > 0 {
            let chunk = remaining.min(16);
            let shifted = (value >> (remaining - chunk)) & ((1u64 << chunk) - 1) as u32;
            self.encode(shifted, shifted + 1, 1u32 << chunk);
            remaining -= chunk;
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            loop {
                self.out.push(self.cache.wrapping_add(carry));
                self.cache = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    /// Flush pending state; the stream gains at most 5 tail bytes plus the
    /// leading cache byte.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    range: u32,
    code: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::Stream(
                "range-coded payload shorter than 5 bytes".into(),
            ));
        }
        let mut dec = Self {
            range: u32::MAX,
            code: 0,
            bytes,
            pos: 1,
        };
        for _ in 0..4 {
            let b = dec.next_byte()?;
            dec.code = (dec.code << 8) | b as u32;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self
            .bytes
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::Stream("truncated range-coded payload".into()))?;
        self.pos += 1;
        Ok(b)
    }

    /// Cumulative value of the next symbol; caller locates the slot holding
    /// it and confirms with [`Self::decode_update`].
    pub fn decode_freq(&mut self, total: u32) -> u32 {
        debug_assert!((1..=MAX_TOTAL).contains(&total));
        let r = self.range / total;
        (self.code / r).min(total - 1)
    }

    pub fn decode_update(&mut self, cum_lo: u32, cum_hi: u32, total: u32) -> Result<()> {
        debug_assert!(cum_lo < cum_hi && cum_hi <= total);
        let r = self.range / total;
        self.code -= r * cum_lo;
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            let b = self.next_byte()?;
            self.code = (self.code << 8) | b as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_raw(&mut self, bits: u32) -> Result<u32> {
        debug_assert!(bits <= 32);
        let mut remaining = bits;
        let mut value: u32 = 0;
        while remaining > 0 {
            let chunk = remaining.min(16);
            let v = self.decode_freq(1u32 << chunk);
            self.decode_update(v, v + 1, 1u32 << chunk)?;
            value = (value << chunk) | v;
            remaining -= chunk;
        }
        Ok(value)
    }

    /// Bytes consumed so far (including the leading cache byte).
    pub fn consumed(&self) -> usize {
        self.pos
    }
}
