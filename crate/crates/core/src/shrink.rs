//! Server-side channel sorting and width shrinking.
//!
//! Hidden layers are sorted by descending row norm once per round, after
//! which every sub-model is simply the prefix of each hidden layer. Input
//! features and output classes are never shrunk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GlobalModel, GradientUpdate, LayerParams, ModelArch, UpdateMask};

/// `perms[l][new] = old` for every hidden layer `l`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPermutation {
    pub perms: Vec<Vec<usize>>,
}

impl ChannelPermutation {
    pub fn is_identity(&self) -> bool {
        self.perms
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &j)| i == j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModelSpec {
    pub alpha: f64,
    /// Kept width of every hidden layer.
    pub kept_widths: Vec<usize>,
}

impl SubModelSpec {
    /// Kept channels are always the prefix `0..kept_width` of the sorted layer.
    pub fn kept_channel_ids(&self, hidden_layer: usize) -> std::ops::Range<usize> {
        0..self.kept_widths[hidden_layer]
    }

    /// `(out, in)` of every sub-model layer.
    pub fn layer_shapes(&self, arch: &ModelArch) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.kept_widths.len() + 2);
        dims.push(arch.input_dim);
        dims.extend_from_slice(&self.kept_widths);
        dims.push(arch.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "shrink factor {alpha} outside (0, 1]"
        )));
    }
    Ok(())
}

/// `max(1, ceil(width * sqrt(alpha)))`, tolerant of round-off just above an integer.
pub fn kept_width(width: usize, alpha: f64) -> usize {
    let w = (width as f64 * alpha.sqrt() - 1e-9).ceil() as usize;
    w.clamp(1, width)
}

pub fn shrink_arch(arch: &ModelArch, alpha: f64) -> Result<ModelArch> {
    check_alpha(alpha)?;
    Ok(ModelArch {
        hidden_sizes: arch
            .hidden_sizes
            .iter()
            .map(|&h| kept_width(h, alpha))
            .collect(),
        ..arch.clone()
    })
}

fn row_norm_sq(layer: &LayerParams, k: usize) -> f64 {
    layer.row(k)[..layer.in_dim]
        .iter()
        .map(|&w| (w as f64) * (w as f64))
        .sum()
}

/// Reorders every hidden layer's output channels by descending L2 norm of
/// their weight rows (bias excluded, ties by lower index) and permutes the
/// following layer's input columns to match.
pub fn sort_channels(model: &GlobalModel) -> (GlobalModel, ChannelPermutation) {
    let mut sorted = model.clone();
    let hidden = model.layers.len() - 1;
    let mut perms = Vec::with_capacity(hidden);
    for l in 0..hidden {
        let layer = &sorted.layers[l];
        let norms: Vec<f64> = (0..layer.out_dim).map(|k| row_norm_sq(layer, k)).collect();
        let mut perm: Vec<usize> = (0..layer.out_dim).collect();
        perm.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

        let src = sorted.layers[l].clone();
        for (new, &old) in perm.iter().enumerate() {
            sorted.layers[l].row_mut(new).copy_from_slice(src.row(old));
        }
        let next_src = sorted.layers[l + 1].clone();
        let next = &mut sorted.layers[l + 1];
        for k in 0..next.out_dim {
            let from = next_src.row(k);
            let to = next.row_mut(k);
            for (new, &old) in perm.iter().enumerate() {
                to[new] = from[old];
            }
        }
        perms.push(perm);
    }
    (sorted, ChannelPermutation { perms })
}

pub fn submodel_spec(arch: &ModelArch, alpha: f64) -> Result<SubModelSpec> {
    Ok(SubModelSpec {
        alpha,
        kept_widths: shrink_arch(arch, alpha)?.hidden_sizes,
    })
}

/// Copies the `(out, in)` prefix block of each layer (weights plus bias).
fn restrict_layers(layers: &[LayerParams], shapes: &[(usize, usize)]) -> Vec<LayerParams> {
    layers
        .iter()
        .zip(shapes)
        .map(|(layer, &(out, inp))| {
            let mut sub = LayerParams::zeros(out, inp);
            for k in 0..out {
                let src = layer.row(k);
                let dst = sub.row_mut(k);
                dst[..inp].copy_from_slice(&src[..inp]);
                dst[inp] = src[layer.in_dim];
            }
            sub
        })
        .collect()
}

/// Prefix sub-model of a channel-sorted model.
pub fn extract_submodel(sorted_model: &GlobalModel, alpha: f64) -> Result<(GlobalModel, SubModelSpec)> {
    let spec = submodel_spec(&sorted_model.arch, alpha)?;
    let shapes = spec.layer_shapes(&sorted_model.arch);
    let sub = GlobalModel {
        arch: shrink_arch(&sorted_model.arch, alpha)?,
        layers: restrict_layers(&sorted_model.layers, &shapes),
        version: sorted_model.version,
    };
    Ok((sub, spec))
}

/// Restricts a global-shaped update to the sub-model coordinates of `spec`.
pub fn restrict_update(update: &GradientUpdate, spec: &SubModelSpec, arch: &ModelArch) -> Result<GradientUpdate> {
    if update.shapes() != arch.layer_shapes() {
        return Err(Error::ShapeMismatch("update is not global-shaped".into()));
    }
    Ok(GradientUpdate {
        layers: restrict_layers(&update.layers, &spec.layer_shapes(arch)),
        learning_rate: update.learning_rate,
    })
}

fn embed_values<T: Copy>(sub: &[T], sub_shape: (usize, usize), global: &mut [T], global_in: usize) {
    let (out, inp) = sub_shape;
    for k in 0..out {
        let src = &sub[k * (inp + 1)..(k + 1) * (inp + 1)];
        let dst = &mut global[k * (global_in + 1)..(k + 1) * (global_in + 1)];
        dst[..inp].copy_from_slice(&src[..inp]);
        dst[global_in] = src[inp];
    }
}

fn check_sub_shapes(sub: &[(usize, usize)], spec: &SubModelSpec, arch: &ModelArch) -> Result<Vec<(usize, usize)>> {
    let expected = spec.layer_shapes(arch);
    if sub != expected.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "sub-model shapes {sub:?} do not match spec {expected:?}"
        )));
    }
    Ok(expected)
}

/// Zero-pads a sub-model update into global coordinates. Also returns the
/// coverage mask of coordinates the sub-model owns.
pub fn embed_update(
    sub_update: &GradientUpdate,
    spec: &SubModelSpec,
    arch: &ModelArch,
) -> Result<(GradientUpdate, UpdateMask)> {
    let shapes = check_sub_shapes(&sub_update.shapes(), spec, arch)?;
    let global_shapes = arch.layer_shapes();
    let mut out = GradientUpdate::zeros_like(&global_shapes, sub_update.learning_rate);
    let mut coverage = UpdateMask {
        layers: global_shapes.iter().map(|&(o, i)| vec![false; o * (i + 1)]).collect(),
    };
    for (l, sub) in sub_update.layers.iter().enumerate() {
        let gin = global_shapes[l].1;
        embed_values(&sub.data, shapes[l], &mut out.layers[l].data, gin);
        embed_values(&vec![true; sub.len()], shapes[l], &mut coverage.layers[l], gin);
    }
    Ok((out, coverage))
}

/// Zero-pads a sub-model mask into global coordinates.
pub fn embed_mask(sub_mask: &UpdateMask, spec: &SubModelSpec, arch: &ModelArch) -> Result<UpdateMask> {
    let sub_shapes = spec.layer_shapes(arch);
    if sub_mask.layers.len() != sub_shapes.len()
        || sub_mask
            .layers
            .iter()
            .zip(&sub_shapes)
            .any(|(m, (o, i))| m.len() != o * (i + 1))
    {
        return Err(Error::ShapeMismatch("mask does not match spec".into()));
    }
    let global_shapes = arch.layer_shapes();
    let mut out = UpdateMask {
        layers: global_shapes.iter().map(|&(o, i)| vec![false; o * (i + 1)]).collect(),
    };
    for (l, m) in sub_mask.layers.iter().enumerate() {
        embed_values(m, sub_shapes[l], &mut out.layers[l], global_shapes[l].1);
    }
    Ok(out)
}
