//! Adaptive binary range coder with a single count-based context.
//!
//! 32-bit range with byte-wise renormalization and carry propagation
//! through a cached byte (the LZMA scheme). The model starts at
//! `c0 = c1 = 1`, bumps the count of each coded symbol, and halves both
//! counts (keeping each at least 1) once their sum reaches 65536.

use crate::error::{truncated, Result};

const TOP: u32 = 1 << 24;
const MAX_TOTAL: u32 = 1 << 16;

/// Symbol counts for one binary context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitModel {
    c0: u32,
    c1: u32,
}

impl Default for BitModel {
    fn default() -> Self {
        BitModel { c0: 1, c1: 1 }
    }
}

impl BitModel {
    /// Estimated probability of a one.
    pub fn p1(&self) -> f64 {
        f64::from(self.c1) / f64::from(self.c0 + self.c1)
    }

    #[inline]
    fn split(&self, range: u32) -> u32 {
        (range / (self.c0 + self.c1)) * self.c0
    }

    #[inline]
    fn update(&mut self, bit: bool) {
        if bit {
            self.c1 += 1;
        } else {
            self.c0 += 1;
        }
        if self.c0 + self.c1 >= MAX_TOTAL {
            self.c0 = (self.c0 / 2).max(1);
            self.c1 = (self.c1 / 2).max(1);
        }
    }
}

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
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn encode(&mut self, bit: bool, model: &mut BitModel) {
        let bound = model.split(self.range);
        if bit {
            self.low += u64::from(bound);
            self.range -= bound;
        } else {
            self.range = bound;
        }
        model.update(bit);
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or_else(|| truncated("range-coded stream"))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, model: &mut BitModel) -> Result<bool> {
        let bound = model.split(self.range);
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        model.update(bit);
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        Ok(bit)
    }

    pub fn bytes_consumed(&self) -> usize {
        self.pos
    }
}

/// Codes a bit sequence with one fresh adaptive context. An empty
/// sequence codes to zero bytes.
pub fn rc_encode_bits(bits: &[bool]) -> Vec<u8> {
    if bits.is_empty() {
        return Vec::new();
    }
    let mut model = BitModel::default();
    let mut enc = RangeEncoder::new();
    for &b in bits {
        enc.encode(b, &mut model);
    }
    enc.finish()
}

/// Inverse of [`rc_encode_bits`] given the number of coded bits.
pub fn rc_decode_bits(bytes: &[u8], count: usize) -> Result<Vec<bool>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut model = BitModel::default();
    let mut dec = RangeDecoder::new(bytes)?;
    (0..count).map(|_| dec.decode(&mut model)).collect()
}
