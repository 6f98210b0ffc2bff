//! Kernel-wise sparsification and unbiased stochastic quantization.

use rand::Rng;

use super::{QuantizedLayer, QuantizedUpdate, SparseUpdate};
use crate::error::{Error, Result};
use crate::model::{GradientUpdate, LayerParams, UpdateMask};
use crate::rng::StreamRng;

/// Zeroes the `floor(rho * K)` rows of smallest L2 norm in every layer
/// (ties: lower row index first). The mask marks the nonzero coordinates
/// that remain.
pub fn sparsify(update: &GradientUpdate, rho: f64) -> Result<SparseUpdate> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("sparsity {rho} outside [0, 1)")));
    }
    let mut values = update.clone();
    let mut kept = 0;
    for layer in &mut values.layers {
        let k = layer.out_dim;
        let remove = ((rho * k as f64) + 1e-9).floor() as usize;
        let norms: Vec<f64> = (0..k)
            .map(|r| layer.row(r).iter().map(|&v| (v as f64) * (v as f64)).sum())
            .collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
        for &r in &order[..remove.min(k)] {
            layer.row_mut(r).fill(0.0);
        }
        kept += k - remove.min(k);
    }
    let mask = UpdateMask {
        layers: values
            .layers
            .iter()
            .map(|l| l.data.iter().map(|&v| v != 0.0).collect())
            .collect(),
    };
    Ok(SparseUpdate {
        values,
        mask,
        kept_kernel_count: kept,
    })
}

/// Quantization point `Q_l = l (u_max - u_min) / L + u_min`.
#[inline]
pub fn quantization_point(l: u32, u_min: f32, u_max: f32, levels: u16) -> f64 {
    let (lo, hi) = (u_min as f64, u_max as f64);
    l as f64 * (hi - lo) / levels as f64 + lo
}

/// Stochastic rounding of every nonzero coordinate onto the `L + 1` points
/// `Q_0..Q_L` spanning its layer's magnitude range.
pub fn quantize(sparse: &SparseUpdate, levels: u16, rng: &mut StreamRng) -> Result<QuantizedUpdate> {
    if levels == 0 {
        return Err(Error::InvalidArgument("quantization needs L >= 1".into()));
    }
    if sparse.mask.count_ones() == 0 {
        return Err(Error::EmptyUpdate);
    }
    let mut layers = Vec::with_capacity(sparse.values.layers.len());
    for (layer, mask) in sparse.values.layers.iter().zip(&sparse.mask.layers) {
        layers.push(quantize_layer(layer, mask, levels, rng));
    }
    Ok(QuantizedUpdate { layers })
}

fn quantize_layer(layer: &LayerParams, mask: &[bool], levels: u16, rng: &mut StreamRng) -> QuantizedLayer {
    let nonzero: Vec<f32> = layer
        .data
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect();
    let (u_min, u_max) = nonzero.iter().fold((f32::INFINITY, 0.0f32), |(lo, hi), &v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    let u_min = if nonzero.is_empty() { 0.0 } else { u_min };
    let mut out_levels = Vec::with_capacity(nonzero.len());
    let mut signs = Vec::with_capacity(nonzero.len());
    let lo = u_min as f64;
    let hi = u_max as f64;
    for &v in &nonzero {
        let mag = v.abs() as f64;
        let level = if hi <= lo {
            levels
        } else {
            let pos = (mag - lo) / (hi - lo) * levels as f64;
            let l = (pos.floor() as i64).clamp(0, levels as i64 - 1) as u32;
            let q_lo = quantization_point(l, u_min, u_max, levels);
            let q_hi = quantization_point(l + 1, u_min, u_max, levels);
            // P(round up) = (|u| - Q_l) / (Q_{l+1} - Q_l)
            let p_up = ((mag - q_lo) / (q_hi - q_lo)).clamp(0.0, 1.0);
            let r: f64 = rng.gen();
            if r < p_up {
                (l + 1) as u16
            } else {
                l as u16
            }
        };
        out_levels.push(level);
        signs.push(v < 0.0);
    }
    QuantizedLayer {
        element_count: layer.len(),
        u_min,
        u_max,
        levels,
        mask: mask.to_vec(),
        level_indices: out_levels,
        signs,
    }
}

/// Rebuilds a dense update; masked-out coordinates are 0.
pub fn dequantize(q: &QuantizedUpdate, shapes: &[(usize, usize)]) -> Result<GradientUpdate> {
    if q.layers.len() != shapes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} quantized layers for {} shapes",
            q.layers.len(),
            shapes.len()
        )));
    }
    let mut out = GradientUpdate::zeros_like(shapes, 0.0);
    for (ql, dst) in q.layers.iter().zip(&mut out.layers) {
        if ql.element_count != dst.len() || ql.mask.len() != dst.len() {
            return Err(Error::ShapeMismatch(format!(
                "layer of {} elements for shape {:?}",
                ql.element_count,
                dst.shape()
            )));
        }
        let ones = ql.mask.iter().filter(|&&b| b).count();
        if ql.level_indices.len() != ones || ql.signs.len() != ones {
            return Err(Error::corrupt("level/sign count does not match mask"));
        }
        let mut it = ql.level_indices.iter().zip(&ql.signs);
        for (v, &m) in dst.data.iter_mut().zip(&ql.mask) {
            if !m {
                continue;
            }
            let (&level, &neg) = it.next().expect("counted above");
            if level > ql.levels {
                return Err(Error::corrupt(format!(
                    "level index {level} exceeds L = {}",
                    ql.levels
                )));
            }
            let mag = quantization_point(level as u32, ql.u_min, ql.u_max, ql.levels) as f32;
            *v = if neg { -mag } else { mag };
        }
    }
    Ok(out)
}
