//! Canonical Huffman coding of quantization level indices.
//!
//! Only the code length of every symbol is transmitted; codes are assigned
//! canonically (by length, then symbol), so the table fully determines the
//! code. Lengths are limited to [`MAX_CODE_LEN`].

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

pub const MAX_CODE_LEN: u8 = 32;

/// Code lengths for `freqs`; zero-frequency symbols get length 0.
pub fn code_lengths(freqs: &[u64]) -> Vec<u8> {
    let mut freqs = freqs.to_vec();
    loop {
        let lengths = unlimited_lengths(&freqs);
        if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
            return lengths;
        }
        // flatten the distribution until the tree is shallow enough
        for f in freqs.iter_mut().filter(|f| **f > 0) {
            *f = (*f >> 1) | 1;
        }
    }
}

fn unlimited_lengths(freqs: &[u64]) -> Vec<u8> {
    let mut lengths = vec![0u8; freqs.len()];
    let used: Vec<usize> = (0..freqs.len()).filter(|&s| freqs[s] > 0).collect();
    match used.len() {
        0 => return lengths,
        1 => {
            lengths[used[0]] = 1;
            return lengths;
        }
        _ => {}
    }
    // nodes: leaves first, then internal; heap keyed by (weight, node id)
    let mut parent: Vec<usize> = vec![usize::MAX; used.len()];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = used
        .iter()
        .enumerate()
        .map(|(node, &s)| Reverse((freqs[s], node)))
        .collect();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().expect("len > 1");
        let Reverse((wb, b)) = heap.pop().expect("len > 1");
        let node = parent.len();
        parent.push(usize::MAX);
        parent[a] = node;
        parent[b] = node;
        heap.push(Reverse((wa + wb, node)));
    }
    // depth of every node; parents always have larger ids than children
    let mut depth = vec![0u32; parent.len()];
    for node in (0..parent.len()).rev() {
        if parent[node] != usize::MAX {
            depth[node] = depth[parent[node]] + 1;
        }
    }
    for (leaf, &s) in used.iter().enumerate() {
        lengths[s] = depth[leaf].min(255) as u8;
    }
    lengths
}

/// Canonical codes: `(code, length)` per symbol.
pub fn canonical_codes(lengths: &[u8]) -> Vec<(u64, u8)> {
    let mut order: Vec<usize> = (0..lengths.len()).filter(|&s| lengths[s] > 0).collect();
    order.sort_by_key(|&s| (lengths[s], s));
    let mut codes = vec![(0u64, 0u8); lengths.len()];
    let mut code = 0u64;
    let mut prev_len = 0u8;
    for (i, &s) in order.iter().enumerate() {
        let len = lengths[s];
        if i > 0 {
            code += 1;
        }
        code <<= len - prev_len;
        prev_len = len;
        codes[s] = (code, len);
    }
    codes
}

pub fn encode_symbols(symbols: &[u16], lengths: &[u8]) -> Vec<u8> {
    let codes = canonical_codes(lengths);
    let mut w = BitWriter::new();
    for &s in symbols {
        let (code, len) = codes[s as usize];
        debug_assert!(len > 0, "symbol {s} has no code");
        w.write_bits(code, len as u32);
    }
    w.finish()
}

#[derive(Debug)]
pub struct Decoder {
    /// symbols sorted canonically
    symbols: Vec<u16>,
    count: Vec<u64>,
    first_code: Vec<u64>,
    first_index: Vec<usize>,
    max_len: u8,
}

impl Decoder {
    pub fn new(lengths: &[u8]) -> Result<Self> {
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        if max_len > MAX_CODE_LEN {
            return Err(Error::corrupt(format!("code length {max_len} exceeds {MAX_CODE_LEN}")));
        }
        let mut count = vec![0u64; max_len as usize + 1];
        for &l in lengths.iter().filter(|&&l| l > 0) {
            count[l as usize] += 1;
        }
        // Kraft inequality
        let mut kraft = 0u128;
        for (len, &c) in count.iter().enumerate().skip(1) {
            kraft += (c as u128) << (MAX_CODE_LEN as usize - len);
        }
        if kraft > 1u128 << MAX_CODE_LEN {
            return Err(Error::corrupt("over-subscribed Huffman table"));
        }
        let mut symbols: Vec<u16> = (0..lengths.len())
            .filter(|&s| lengths[s] > 0)
            .map(|s| s as u16)
            .collect();
        symbols.sort_by_key(|&s| (lengths[s as usize], s));
        let mut first_code = vec![0u64; max_len as usize + 1];
        let mut first_index = vec![0usize; max_len as usize + 1];
        let mut code = 0u64;
        let mut index = 0usize;
        for len in 1..=max_len as usize {
            code = (code + count[len - 1]) << 1;
            first_code[len] = code;
            first_index[len] = index;
            index += count[len] as usize;
        }
        Ok(Self {
            symbols,
            count,
            first_code,
            first_index,
            max_len,
        })
    }

    pub fn decode(&self, r: &mut BitReader<'_>) -> Result<u16> {
        let mut code = 0u64;
        for len in 1..=self.max_len as usize {
            code = (code << 1) | r.read_bit()? as u64;
            let offset = code.wrapping_sub(self.first_code[len]);
            if code >= self.first_code[len] && offset < self.count[len] {
                return Ok(self.symbols[self.first_index[len] + offset as usize]);
            }
        }
        Err(Error::corrupt("invalid Huffman code"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lengths_of_skewed_source() {
        let lengths = code_lengths(&[8, 4, 2, 1, 1, 0]);
        assert_eq!(lengths, vec![1, 2, 3, 4, 4, 0]);
        let codes = canonical_codes(&lengths);
        assert_eq!(codes[0], (0b0, 1));
        assert_eq!(codes[1], (0b10, 2));
        assert_eq!(codes[2], (0b110, 3));
        assert_eq!(codes[3], (0b1110, 4));
        assert_eq!(codes[4], (0b1111, 4));
    }

    #[test]
    fn single_symbol_gets_one_bit() {
        assert_eq!(code_lengths(&[0, 5, 0]), vec![0, 1, 0]);
        assert_eq!(code_lengths(&[0, 0]), vec![0, 0]);
    }

    #[test]
    fn length_limit_holds_for_fibonacci_weights() {
        let mut f = vec![1u64, 1];
        while f.len() < 60 {
            let n = f[f.len() - 1] + f[f.len() - 2];
            f.push(n);
        }
        let lengths = code_lengths(&f);
        assert!(lengths.iter().all(|&l| (1..=MAX_CODE_LEN).contains(&l)));
        let symbols: Vec<u16> = (0..60).collect();
        let bytes = encode_symbols(&symbols, &lengths);
        let dec = Decoder::new(&lengths).unwrap();
        let mut r = BitReader::new(&bytes);
        for &s in &symbols {
            assert_eq!(dec.decode(&mut r).unwrap(), s);
        }
    }

    #[test]
    fn oversubscribed_table_rejected() {
        assert!(Decoder::new(&[1, 1, 1]).is_err());
    }

    proptest! {
        #[test]
        fn symbols_round_trip(symbols in prop::collection::vec(0u16..40, 1..400)) {
            let mut freqs = vec![0u64; 40];
            for &s in &symbols {
                freqs[s as usize] += 1;
            }
            let lengths = code_lengths(&freqs);
            let bytes = encode_symbols(&symbols, &lengths);
            let dec = Decoder::new(&lengths).unwrap();
            let mut r = BitReader::new(&bytes);
            for &s in &symbols {
                prop_assert_eq!(dec.decode(&mut r).unwrap(), s);
            }
            // Huffman never loses to a fixed-width code of the used alphabet
            let bits: u64 = symbols.iter().map(|&s| lengths[s as usize] as u64).sum();
            let used = freqs.iter().filter(|&&f| f > 0).count().max(2);
            let fixed = (used as f64).log2().ceil() as u64 * symbols.len() as u64;
            prop_assert!(bits <= fixed);
        }
    }
}
