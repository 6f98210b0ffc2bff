//! Dense multilayer classifier trained with plain mini-batch SGD.
//!
//! Parameters are stored as 32-bit floats in a row-per-channel layout: row `k`
//! of a layer holds the `in_dim` incoming weights of output neuron `k`
//! followed by its bias. The same layout is used for updates and masks, so a
//! "kernel" in the codec is exactly one row here.
//!
//! Forward and backward passes run in `f64` on a private copy of the
//! parameters; only the final difference `w_before - w_after` is rounded to
//! `f32`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl ModelArch {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_sizes,
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArch("input and output dims must be >= 1".into()));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::InvalidArch("hidden_sizes must be non-empty".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArch("hidden sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// `(out_dim, in_dim)` of every layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_sizes);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    /// Parameter count including biases.
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * (i + 1)).sum()
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn flops(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i).sum()
    }
}

/// One dense layer (or a tensor shaped like one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub out_dim: usize,
    pub in_dim: usize,
    /// `out_dim` rows of `in_dim + 1` values (weights then bias).
    pub data: Vec<f32>,
}

impl LayerParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            data: vec![0.0; out_dim * (in_dim + 1)],
        }
    }

    #[inline]
    pub fn row_len(&self) -> usize {
        self.in_dim + 1
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f32] {
        let n = self.row_len();
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.row_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn weight(&self, k: usize, c: usize) -> f32 {
        self.data[k * self.row_len() + c]
    }

    #[inline]
    pub fn bias(&self, k: usize) -> f32 {
        self.data[k * self.row_len() + self.in_dim]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.out_dim, self.in_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub arch: ModelArch,
    pub layers: Vec<LayerParams>,
    /// Round index of the last applied update.
    pub version: u64,
}

impl GlobalModel {
    pub fn zeros(arch: ModelArch) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| LayerParams::zeros(o, i))
            .collect();
        Self {
            arch,
            layers,
            version: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.data.iter().all(|v| v.is_finite()))
    }

    /// Logits for one input vector.
    pub fn forward(&self, x: &[f32]) -> Vec<f64> {
        let net = Net::from_model(self);
        let input: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let acts = net.forward(&input);
        acts.last().cloned().unwrap_or_default()
    }
}

/// A device's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub dim: usize,
    /// Row-major `size x dim`.
    pub features: Vec<f32>,
    pub labels: Vec<u32>,
}

impl DataShard {
    pub fn new(dim: usize, features: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} samples of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// `w_before - w_after` in the coordinates of the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientUpdate {
    pub layers: Vec<LayerParams>,
    pub learning_rate: f32,
}

impl GradientUpdate {
    pub fn zeros_like(shapes: &[(usize, usize)], learning_rate: f32) -> Self {
        Self {
            layers: shapes.iter().map(|&(o, i)| LayerParams::zeros(o, i)).collect(),
            learning_rate,
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(LayerParams::shape).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.data.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum()
    }

    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.layers.iter().flat_map(|l| l.data.iter().copied())
    }
}

/// Per-coordinate bitset in the same layout as [`LayerParams::data`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateMask {
    pub layers: Vec<Vec<bool>>,
}

impl UpdateMask {
    pub fn full(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes.iter().map(|&(o, i)| vec![true; o * (i + 1)]).collect(),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.layers.iter().map(|l| l.iter().filter(|&&b| b).count()).sum()
    }

    /// Elementwise AND; shapes must agree.
    pub fn and(&self, other: &UpdateMask) -> Result<UpdateMask> {
        if self.layers.len() != other.layers.len()
            || self.layers.iter().zip(&other.layers).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ShapeMismatch("mask shapes differ".into()));
        }
        Ok(UpdateMask {
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x && y).collect())
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Scaled-uniform initialization, biases zero.
pub fn init_model(arch: &ModelArch, seed: u64) -> Result<GlobalModel> {
    arch.validate()?;
    let mut rng = rng::stream(seed, Purpose::Init, 0, 0);
    let mut model = GlobalModel::zeros(arch.clone());
    for layer in &mut model.layers {
        let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
        let in_dim = layer.in_dim;
        for k in 0..layer.out_dim {
            let row = layer.row_mut(k);
            for w in &mut row[..in_dim] {
                *w = rng.gen_range(-limit..=limit) as f32;
            }
        }
    }
    Ok(model)
}

/// `f64` working copy of a model used by the trainer.
struct Net {
    activation: Activation,
    shapes: Vec<(usize, usize)>,
    params: Vec<Vec<f64>>,
}

impl Net {
    fn from_model(model: &GlobalModel) -> Self {
        Self {
            activation: model.arch.activation,
            shapes: model.layers.iter().map(LayerParams::shape).collect(),
            params: model
                .layers
                .iter()
                .map(|l| l.data.iter().map(|&v| v as f64).collect())
                .collect(),
        }
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.shapes.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.shapes.len() + 1);
        acts.push(x.to_vec());
        for (l, &(out, inp)) in self.shapes.iter().enumerate() {
            let p = &self.params[l];
            let a_in = &acts[l];
            let mut z = Vec::with_capacity(out);
            for k in 0..out {
                let row = &p[k * (inp + 1)..(k + 1) * (inp + 1)];
                let mut s = row[inp];
                for c in 0..inp {
                    s += row[c] * a_in[c];
                }
                z.push(if l == last { s } else { self.activation.apply(s) });
            }
            acts.push(z);
        }
        acts
    }

    /// Adds the cross-entropy gradient of one sample into `grads`; returns its loss.
    fn accumulate(&self, x: &[f64], label: usize, grads: &mut [Vec<f64>]) -> f64 {
        let acts = self.forward(x);
        let logits = acts.last().expect("at least one layer");
        let (probs, lse) = softmax(logits);
        let loss = lse - logits[label];

        let mut delta: Vec<f64> = probs;
        delta[label] -= 1.0;
        for l in (0..self.shapes.len()).rev() {
            let (out, inp) = self.shapes[l];
            let a_in = &acts[l];
            let g = &mut grads[l];
            for k in 0..out {
                let d = delta[k];
                if d == 0.0 {
                    continue;
                }
                let base = k * (inp + 1);
                for c in 0..inp {
                    g[base + c] += d * a_in[c];
                }
                g[base + inp] += d;
            }
            if l > 0 {
                let p = &self.params[l];
                let mut prev = vec![0.0; inp];
                for k in 0..out {
                    let d = delta[k];
                    if d == 0.0 {
                        continue;
                    }
                    let base = k * (inp + 1);
                    for (c, pv) in prev.iter_mut().enumerate() {
                        *pv += d * p[base + c];
                    }
                }
                for (c, pv) in prev.iter_mut().enumerate() {
                    *pv *= self.activation.derivative(a_in[c]);
                }
                delta = prev;
            }
        }
        loss
    }
}

fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    (logits.iter().map(|&z| (z - lse).exp()).collect(), lse)
}

fn check_input(model: &GlobalModel, data: &DataShard) -> Result<()> {
    if data.dim != model.arch.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "data dim {} != model input dim {}",
            data.dim, model.arch.input_dim
        )));
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y as usize >= model.arch.output_dim) {
        return Err(Error::ShapeMismatch(format!(
            "label {bad} out of range for {} classes",
            model.arch.output_dim
        )));
    }
    Ok(())
}

/// Runs `epochs` of mini-batch SGD on a copy of `sub_model` and returns
/// `w_before - w_after`. The shard is reshuffled from `rng` each epoch.
pub fn local_train(
    sub_model: &GlobalModel,
    shard: &DataShard,
    epochs: usize,
    lr: f32,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Result<GradientUpdate> {
    check_input(sub_model, shard)?;
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut net = Net::from_model(sub_model);
    let initial = net.params.clone();
    let eta = lr as f64;
    let mut order: Vec<usize> = (0..shard.size()).collect();
    let mut x = vec![0.0; shard.dim];

    for epoch in 0..epochs {
        order.shuffle(rng);
        for (batch, idx) in order.chunks(batch_size).enumerate() {
            let mut grads: Vec<Vec<f64>> = net.params.iter().map(|p| vec![0.0; p.len()]).collect();
            let mut loss = 0.0;
            for &i in idx {
                for (dst, &src) in x.iter_mut().zip(shard.sample(i)) {
                    *dst = src as f64;
                }
                loss += net.accumulate(&x, shard.labels[i] as usize, &mut grads);
            }
            let scale = eta / idx.len() as f64;
            loss /= idx.len() as f64;
            if !loss.is_finite() {
                return Err(Error::LossDiverged {
                    epoch,
                    batch,
                    loss,
                    lr,
                });
            }
            for (p, g) in net.params.iter_mut().zip(&grads) {
                for (w, &gv) in p.iter_mut().zip(g) {
                    *w -= scale * gv;
                }
            }
        }
    }

    let mut layers = Vec::with_capacity(net.params.len());
    for ((before, after), &(out, inp)) in initial.iter().zip(&net.params).zip(&net.shapes) {
        let data: Vec<f32> = before.iter().zip(after).map(|(b, a)| (b - a) as f32).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("local update".into()));
        }
        layers.push(LayerParams {
            out_dim: out,
            in_dim: inp,
            data,
        });
    }
    Ok(GradientUpdate {
        layers,
        learning_rate: lr,
    })
}

/// Mean cross-entropy and top-1 accuracy.
pub fn evaluate(model: &GlobalModel, data: &DataShard) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    check_input(model, data)?;
    let net = Net::from_model(model);
    let mut x = vec![0.0; data.dim];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.size() {
        for (dst, &src) in x.iter_mut().zip(data.sample(i)) {
            *dst = src as f64;
        }
        let acts = net.forward(&x);
        let logits = acts.last().expect("at least one layer");
        let (_, lse) = softmax(logits);
        let y = data.labels[i] as usize;
        loss += lse - logits[y];
        // first maximum wins
        let mut best = 0;
        for k in 1..logits.len() {
            if logits[k] > logits[best] {
                best = k;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    let n = data.size() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// `sum_i |D_i|/|D| * F_i`.
pub fn global_loss(local_losses: &[f64], shard_sizes: &[usize]) -> Result<f64> {
    if local_losses.len() != shard_sizes.len() || local_losses.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} losses for {} shard sizes",
            local_losses.len(),
            shard_sizes.len()
        )));
    }
    if shard_sizes.contains(&0) {
        return Err(Error::InvalidArgument("shard sizes must be > 0".into()));
    }
    let total: usize = shard_sizes.iter().sum();
    Ok(local_losses
        .iter()
        .zip(shard_sizes)
        .map(|(&f, &s)| s as f64 / total as f64 * f)
        .sum())
}
