//! Golomb-Rice coding of the sparsity mask as zero-run lengths.
//!
//! The mask is written as the run of zeros preceding every set coordinate,
//! followed by the trailing run, so the section is self-delimiting given the
//! element count.

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

/// Runs of zeros before each set bit, plus the trailing run.
pub fn zero_runs(mask: &[bool]) -> Vec<u64> {
    let mut runs = Vec::with_capacity(mask.iter().filter(|&&b| b).count() + 1);
    let mut run = 0u64;
    for &bit in mask {
        if bit {
            runs.push(run);
            run = 0;
        } else {
            run += 1;
        }
    }
    runs.push(run);
    runs
}

/// `floor(log2(mean run + 1))`, capped at 31.
pub fn rice_parameter(runs: &[u64]) -> u8 {
    if runs.is_empty() {
        return 0;
    }
    let mean = runs.iter().sum::<u64>() as f64 / runs.len() as f64;
    ((mean + 1.0).log2().floor() as u8).min(31)
}

pub fn write_rice(w: &mut BitWriter, value: u64, k: u8) {
    w.write_unary(value >> k);
    w.write_bits(value & ((1u64 << k) - 1), k as u32);
}

pub fn read_rice(r: &mut BitReader<'_>, k: u8, limit: u64) -> Result<u64> {
    let q = r.read_unary(limit >> k)?;
    let rem = r.read_bits(k as u32)?;
    Ok((q << k) | rem)
}

pub fn encode_mask(mask: &[bool]) -> (u8, Vec<u8>) {
    let runs = zero_runs(mask);
    let k = rice_parameter(&runs);
    let mut w = BitWriter::new();
    for &run in &runs {
        write_rice(&mut w, run, k);
    }
    (k, w.finish())
}

pub fn decode_mask(bytes: &[u8], k: u8, element_count: usize) -> Result<Vec<bool>> {
    if k > 31 {
        return Err(Error::corrupt(format!("rice parameter {k} out of range")));
    }
    let n = element_count as u64;
    let mut r = BitReader::new(bytes);
    // positions first, so a hostile element count allocates nothing until
    // the runs actually cover it
    let mut ones = Vec::new();
    let mut pos = 0u64;
    loop {
        let run = read_rice(&mut r, k, n)?;
        pos = pos
            .checked_add(run)
            .filter(|&p| p <= n)
            .ok_or_else(|| Error::corrupt("mask run overruns layer"))?;
        if pos == n {
            break;
        }
        ones.push(pos as usize);
        pos += 1;
    }
    if r.remaining() >= 8 {
        return Err(Error::corrupt("trailing bytes in mask section"));
    }
    let mut mask = vec![false; element_count];
    for p in ones {
        mask[p] = true;
    }
    Ok(mask)
}
