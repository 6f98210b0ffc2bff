//! All-in-one element-wise aggregation and its optimal coefficients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GlobalModel, GradientUpdate, LayerParams, UpdateMask};

/// Smallest squared divergence factor used in the coefficient denominator.
pub const DIVERGENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub p: Vec<f64>,
}

impl AggregationWeights {
    /// Normalizes non-negative raw weights to sum to one.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidArgument("no devices to weight".into()));
        }
        if raw.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        Ok(Self {
            p: raw.into_iter().map(|w| w / total).collect(),
        })
    }
}

/// Dense update in global coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalUpdate {
    pub layers: Vec<LayerParams>,
}

/// `1 - alpha (2 - alpha) sqrt(beta)`.
pub fn divergence_factor(alpha: f64, beta: f64) -> f64 {
    1.0 - alpha * (2.0 - alpha) * beta.sqrt()
}

fn check_strategy(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) || !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "strategy (alpha {alpha}, beta {beta}) outside (0, 1]"
        )));
    }
    Ok(())
}

/// `p_i ∝ 1 / max(d_i², floor)` with `d_i` the divergence factor.
pub fn optimal_coefficients(strategies: &[(f64, f64)]) -> Result<AggregationWeights> {
    let mut raw = Vec::with_capacity(strategies.len());
    for &(alpha, beta) in strategies {
        check_strategy(alpha, beta)?;
        raw.push(1.0 / divergence_factor(alpha, beta).powi(2).max(DIVERGENCE_FLOOR));
    }
    AggregationWeights::normalized(raw)
}

/// Optimal coefficients multiplied by shard sizes before normalization.
pub fn blended_coefficients(strategies: &[(f64, f64)], shard_sizes: &[usize]) -> Result<AggregationWeights> {
    if strategies.len() != shard_sizes.len() {
        return Err(Error::ShapeMismatch("one shard size per device required".into()));
    }
    let base = optimal_coefficients(strategies)?;
    AggregationWeights::normalized(
        base.p
            .iter()
            .zip(shard_sizes)
            .map(|(&p, &n)| p * n as f64)
            .collect(),
    )
}

/// `|D_i| / |D|`.
pub fn fedavg_coefficients(shard_sizes: &[usize]) -> Result<AggregationWeights> {
    AggregationWeights::normalized(shard_sizes.iter().map(|&n| n as f64).collect())
}

/// Per element: `sum p_i m_i u_i / sum p_i m_i` over devices in index order,
/// or 0 where no device contributes.
pub fn aio_aggregate(
    updates: &[GradientUpdate],
    masks: &[UpdateMask],
    weights: &AggregationWeights,
) -> Result<GlobalUpdate> {
    if updates.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    if masks.len() != updates.len() || weights.p.len() != updates.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} updates, {} masks, {} weights",
            updates.len(),
            masks.len(),
            weights.p.len()
        )));
    }
    let shapes = updates[0].shapes();
    for (u, m) in updates.iter().zip(masks) {
        if u.shapes() != shapes
            || m.layers.len() != shapes.len()
            || m.layers.iter().zip(&u.layers).any(|(ml, ul)| ml.len() != ul.len())
        {
            return Err(Error::ShapeMismatch("updates and masks must share global shapes".into()));
        }
    }
    let layers = shapes
        .iter()
        .enumerate()
        .map(|(l, &(o, i))| {
            let mut out = LayerParams::zeros(o, i);
            out.data.par_iter_mut().enumerate().for_each(|(j, v)| {
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for ((u, m), &p) in updates.iter().zip(masks).zip(&weights.p) {
                    if m.layers[l][j] {
                        num += p * u.layers[l].data[j] as f64;
                        den += p;
                    }
                }
                if den > 0.0 {
                    *v = (num / den) as f32;
                }
            });
            out
        })
        .collect();
    Ok(GlobalUpdate { layers })
}

/// `w - u`, with the version bumped.
pub fn apply_global_update(model: &GlobalModel, update: &GlobalUpdate) -> Result<GlobalModel> {
    if model.layers.len() != update.layers.len()
        || model
            .layers
            .iter()
            .zip(&update.layers)
            .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::ShapeMismatch("update does not match model".into()));
    }
    let mut next = model.clone();
    for (w, u) in next.layers.iter_mut().zip(&update.layers) {
        for (a, &b) in w.data.iter_mut().zip(&u.data) {
            *a -= b;
        }
    }
    if !next.is_finite() {
        return Err(Error::NonFinite("global model after update".into()));
    }
    next.version += 1;
    Ok(next)
}
