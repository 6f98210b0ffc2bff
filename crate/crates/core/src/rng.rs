//! Deterministic RNG stream derivation.
//!
//! Every random draw in a simulation comes from a ChaCha stream keyed by
//! `(seed, purpose, round, device)`, so results never depend on the order in
//! which devices are processed or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Data = 2,
    Partition = 3,
    Population = 4,
    Channel = 5,
    Energy = 6,
    Train = 7,
    Quantize = 8,
    Calibrate = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream for `(seed, purpose, round, device)`.
pub fn stream(seed: u64, purpose: Purpose, round: u64, device: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let mut h = splitmix(seed);
    for (i, part) in [purpose as u64, round, device, 0xAC_F1].into_iter().enumerate() {
        h = splitmix(h ^ part.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        key[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
