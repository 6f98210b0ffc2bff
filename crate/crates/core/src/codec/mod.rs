//! Lossy update compression: kernel sparsification, stochastic
//! quantization, and a lossless bitstream (Golomb-Rice mask, raw signs,
//! canonical Huffman levels).

pub mod bits;
pub mod golomb;
pub mod huffman;
mod predictor;
mod quantize;
mod wire;

use serde::{Deserialize, Serialize};

use crate::model::{GradientUpdate, UpdateMask};

pub use predictor::{analytic_plan, calibrate_predictor, default_grid, plan_from_beta, RatePredictor};
pub use quantize::{dequantize, quantization_point, quantize, sparsify};
pub use wire::{decode_update, encode_update, MAGIC, VERSION};

/// Largest level count the wire format can carry.
pub const MAX_LEVELS: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    pub values: GradientUpdate,
    pub mask: UpdateMask,
    pub kept_kernel_count: usize,
}

/// One layer after quantization. `level_indices` and `signs` hold one entry
/// per set mask bit, in coordinate order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub element_count: usize,
    pub u_min: f32,
    pub u_max: f32,
    pub levels: u16,
    pub mask: Vec<bool>,
    pub level_indices: Vec<u16>,
    /// `true` = negative
    pub signs: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedUpdate {
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedUpdate {
    pub fn nonzero_count(&self) -> usize {
        self.layers.iter().map(|l| l.level_indices.len()).sum()
    }

    pub fn element_count(&self) -> usize {
        self.layers.iter().map(|l| l.element_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateHeader {
    pub alpha: f32,
    pub beta: f32,
    pub shapes: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedUpdate {
    pub bytes: Vec<u8>,
    pub declared_alpha: f32,
    pub declared_beta: f32,
}

impl EncodedUpdate {
    pub fn size_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    /// fraction of kernels removed
    pub rho: f64,
    pub levels: u16,
}
