//! MSB-first bit packing.

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    fill: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `n` bits of `value`, most significant first. `n <= 57`.
    pub fn write_bits(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 57);
        if n == 0 {
            return;
        }
        let v = value & ((1u64 << n) - 1);
        self.acc = (self.acc << n) | v;
        self.fill += n;
        while self.fill >= 8 {
            self.fill -= 8;
            self.bytes.push((self.acc >> self.fill) as u8);
        }
        self.acc &= (1u64 << self.fill) - 1;
    }

    pub fn write_bit(&mut self, bit: bool) {
        self.write_bits(bit as u64, 1);
    }

    /// `q` one-bits followed by a zero.
    pub fn write_unary(&mut self, mut q: u64) {
        while q >= 32 {
            self.write_bits(u32::MAX as u64, 32);
            q -= 32;
        }
        self.write_bits(((1u64 << q) - 1) << 1, q as u32 + 1);
    }

    /// Pads with zero bits to a byte boundary and returns the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        if self.fill > 0 {
            let pad = 8 - self.fill;
            self.write_bits(0, pad);
        }
        self.bytes
    }
}

#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.bytes.len() * 8 {
            return Err(Error::corrupt("bit section exhausted"));
        }
        let b = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Ok(b == 1)
    }

    pub fn read_bits(&mut self, n: u32) -> Result<u64> {
        if (n as usize) > self.remaining() {
            return Err(Error::corrupt("bit section exhausted"));
        }
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }

    /// Counts one-bits up to the terminating zero; fails past `limit`.
    pub fn read_unary(&mut self, limit: u64) -> Result<u64> {
        let mut q = 0u64;
        while self.read_bit()? {
            q += 1;
            if q > limit {
                return Err(Error::corrupt("unary run exceeds bound"));
            }
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_and_padding() {
        let mut w = BitWriter::new();
        w.write_bits(0b101, 3);
        w.write_bits(0b1, 1);
        w.write_bits(0xABC, 12);
        w.write_bit(true);
        let bytes = w.finish();
        assert_eq!(bytes, vec![0b1011_1010, 0b1011_1100, 0b1000_0000]);
        let mut r = BitReader::new(&bytes);
        assert_eq!(r.read_bits(3).unwrap(), 0b101);
        assert!(r.read_bit().unwrap());
        assert_eq!(r.read_bits(12).unwrap(), 0xABC);
        assert!(r.read_bit().unwrap());
        assert_eq!(r.remaining(), 7);
        assert!(r.read_bits(8).is_err());
    }

    #[test]
    fn long_unary() {
        let mut w = BitWriter::new();
        w.write_unary(70);
        w.write_unary(0);
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        assert_eq!(r.read_unary(100).unwrap(), 70);
        assert_eq!(r.read_unary(100).unwrap(), 0);
        let mut r = BitReader::new(&bytes);
        assert!(r.read_unary(10).is_err());
    }
}
