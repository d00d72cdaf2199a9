//! Feed-forward networks built from dense and TT layers, with exact backprop.

mod checkpoint;
mod loss;
mod ops;
mod optim;

pub use checkpoint::{read_network, write_network, NETWORK_MAGIC, NETWORK_VERSION};
pub use loss::{argmax, cross_entropy, softmax};
pub use ops::{dense_conv_forward, dense_fc_forward, tt_conv_forward, tt_fc_forward};
pub use optim::{sgd_step, Sgd};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use crate::tt::{
    conv_kernel_to_matrix, conv_matrix_to_kernel, tensorize_conv, tensorize_fc, tt_svd, RankSpec, TensorizationMap,
    TtTensor,
};
use ops::{
    add_bias_rows, col2im, fc_backward_batch, fc_forward_batch, im2col, tt_matrix_backward, tt_matrix_forward, TtCache,
    TtGeometry,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

/// TT shape for a layer: how to fold its weight and the target ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtTarget {
    pub map: TensorizationMap,
    pub ranks: RankSpec,
}

impl TtTarget {
    pub fn clamped_ranks(&self) -> Result<RankSpec> {
        self.ranks.clamp_to(&self.map.mode_sizes())
    }
}

/// Declarative description of one layer.
///
/// A dense layer with `tt` set is compressed by the ADMM pipeline; without
/// it the layer stays dense throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    DenseFc {
        inputs: usize,
        outputs: usize,
        #[serde(default)]
        activation: Activation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tt: Option<TtTarget>,
    },
    DenseConv {
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        height: usize,
        #[serde(default)]
        activation: Activation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tt: Option<TtTarget>,
    },
    TtFc {
        tt: TtTarget,
        #[serde(default)]
        activation: Activation,
    },
    TtConv {
        width: usize,
        height: usize,
        tt: TtTarget,
        #[serde(default)]
        activation: Activation,
    },
    AvgPool2 {
        width: usize,
        height: usize,
        channels: usize,
    },
}

impl LayerSpec {
    pub fn tt_target(&self) -> Option<&TtTarget> {
        match self {
            LayerSpec::DenseFc { tt, .. } | LayerSpec::DenseConv { tt, .. } => tt.as_ref(),
            LayerSpec::TtFc { tt, .. } | LayerSpec::TtConv { tt, .. } => Some(tt),
            LayerSpec::AvgPool2 { .. } => None,
        }
    }

    /// Builds the layer with Glorot-uniform weights (or TT cores scaled to the
    /// same entry variance) and zero biases.
    pub fn build(&self, rng: &mut impl Rng) -> Result<Layer> {
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let (op, activation) = match self {
            LayerSpec::DenseFc {
                inputs,
                outputs,
                activation,
                tt,
            } => {
                if let Some(t) = tt {
                    check_fc_map(&t.map, *outputs, *inputs)?;
                }
                let a = glorot(*inputs, *outputs);
                let weight = DenseTensor::from_fn(&[*outputs, *inputs], |_| rng.random_range(-a..a))?;
                let bias = DenseTensor::zeros(&[*outputs])?;
                (LayerOp::DenseFc { weight, bias }, *activation)
            }
            LayerSpec::DenseConv {
                kernel,
                in_channels,
                out_channels,
                width,
                height,
                activation,
                tt,
            } => {
                if let Some(t) = tt {
                    check_conv_map(&t.map, *kernel, *out_channels, *in_channels)?;
                }
                check_spatial(*kernel, *width, *height)?;
                let k2 = kernel * kernel;
                let a = glorot(k2 * in_channels, k2 * out_channels);
                let weight = DenseTensor::from_fn(&[*kernel, *kernel, *out_channels, *in_channels], |_| {
                    rng.random_range(-a..a)
                })?;
                let bias = DenseTensor::zeros(&[*out_channels])?;
                let op = LayerOp::DenseConv {
                    weight,
                    bias,
                    width: *width,
                    height: *height,
                };
                (op, *activation)
            }
            LayerSpec::TtFc { tt, activation } => {
                tt.map.validate()?;
                if tt.map.kernel.is_some() {
                    return Err(Error::InvalidLayer("tt-fc layer given a conv map".into()));
                }
                let a = glorot(tt.map.in_dim(), tt.map.out_dim());
                let cores = random_cores(tt, a, rng)?;
                let bias = DenseTensor::zeros(&[tt.map.out_dim()])?;
                let op = LayerOp::TtFc {
                    cores,
                    map: tt.map.clone(),
                    bias,
                };
                (op, *activation)
            }
            LayerSpec::TtConv {
                width,
                height,
                tt,
                activation,
            } => {
                tt.map.validate()?;
                let k = tt
                    .map
                    .kernel
                    .ok_or_else(|| Error::InvalidLayer("tt-conv layer given an fc map".into()))?;
                check_spatial(k, *width, *height)?;
                let a = glorot(k * k * tt.map.in_dim(), k * k * tt.map.out_dim());
                let cores = random_cores(tt, a, rng)?;
                let bias = DenseTensor::zeros(&[tt.map.out_dim()])?;
                let op = LayerOp::TtConv {
                    cores,
                    map: tt.map.clone(),
                    bias,
                    width: *width,
                    height: *height,
                };
                (op, *activation)
            }
            LayerSpec::AvgPool2 {
                width,
                height,
                channels,
            } => {
                if *width < 2 || *height < 2 || *channels == 0 {
                    return Err(Error::InvalidLayer(format!(
                        "avg-pool2 needs at least a 2x2 input, got {width}x{height}x{channels}"
                    )));
                }
                let op = LayerOp::AvgPool2 {
                    width: *width,
                    height: *height,
                    channels: *channels,
                };
                (op, Activation::None)
            }
        };
        Ok(Layer { op, activation })
    }
}

fn check_fc_map(map: &TensorizationMap, outputs: usize, inputs: usize) -> Result<()> {
    map.validate()?;
    if map.kernel.is_some() || map.out_dim() != outputs || map.in_dim() != inputs {
        return Err(Error::InvalidLayer(format!(
            "map {:?} x {:?} does not fit a {outputs}x{inputs} fc weight",
            map.out_factors, map.in_factors
        )));
    }
    Ok(())
}

fn check_conv_map(map: &TensorizationMap, k: usize, outputs: usize, inputs: usize) -> Result<()> {
    map.validate()?;
    if map.kernel != Some(k) || map.out_dim() != outputs || map.in_dim() != inputs {
        return Err(Error::InvalidLayer(format!(
            "map {:?} x {:?} (kernel {:?}) does not fit a {k}x{k}x{outputs}x{inputs} kernel",
            map.out_factors, map.in_factors, map.kernel
        )));
    }
    Ok(())
}

fn check_spatial(k: usize, width: usize, height: usize) -> Result<()> {
    if k == 0 || k > width || k > height {
        return Err(Error::InvalidLayer(format!(
            "kernel {k} does not fit a {width}x{height} input"
        )));
    }
    Ok(())
}

/// Random cores whose reconstructed entries have the variance of
/// `U(-a, a)`: each entry sums `Π r_k` products of `d` core entries.
fn random_cores(tt: &TtTarget, a: f64, rng: &mut impl Rng) -> Result<TtTensor> {
    let modes = tt.map.mode_sizes();
    let ranks = tt.clamped_ranks()?;
    let d = modes.len() as f64;
    let paths: f64 = ranks.as_slice().iter().map(|&r| r as f64).product();
    let target_var = a * a / 3.0;
    let core_sd = (target_var / paths).powf(0.5 / d);
    TtTensor::random(&modes, &ranks, core_sd * 3f64.sqrt(), rng)
}

/// Weights and geometry of a layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    /// `weight` is `[outputs, inputs]`.
    DenseFc { weight: DenseTensor, bias: DenseTensor },
    /// `weight` is `[K, K, out_channels, in_channels]`; input is `width×height×in_channels`.
    DenseConv {
        weight: DenseTensor,
        bias: DenseTensor,
        width: usize,
        height: usize,
    },
    TtFc {
        cores: TtTensor,
        map: TensorizationMap,
        bias: DenseTensor,
    },
    TtConv {
        cores: TtTensor,
        map: TensorizationMap,
        bias: DenseTensor,
        width: usize,
        height: usize,
    },
    /// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
    AvgPool2 {
        width: usize,
        height: usize,
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub op: LayerOp,
    pub activation: Activation,
}

/// Values a training forward pass keeps for the backward pass.
#[derive(Debug, Clone, Default)]
struct Cache {
    input: Vec<f64>,
    tt: TtCache,
    output: Vec<f64>,
    rows: usize,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self.op {
            LayerOp::DenseFc { .. } => "dense-fc",
            LayerOp::DenseConv { .. } => "dense-conv",
            LayerOp::TtFc { .. } => "tt-fc",
            LayerOp::TtConv { .. } => "tt-conv",
            LayerOp::AvgPool2 { .. } => "avg-pool2",
        }
    }

    /// Per-sample input length.
    pub fn in_dim(&self) -> usize {
        match &self.op {
            LayerOp::DenseFc { weight, .. } => weight.shape()[1],
            LayerOp::DenseConv {
                weight, width, height, ..
            } => width * height * weight.shape()[3],
            LayerOp::TtFc { map, .. } => map.in_dim(),
            LayerOp::TtConv { map, width, height, .. } => width * height * map.in_dim(),
            LayerOp::AvgPool2 {
                width,
                height,
                channels,
            } => width * height * channels,
        }
    }

    /// Per-sample output length.
    pub fn out_dim(&self) -> usize {
        match &self.op {
            LayerOp::DenseFc { weight, .. } => weight.shape()[0],
            LayerOp::DenseConv {
                weight, width, height, ..
            } => {
                let k = weight.shape()[0];
                (width - k + 1) * (height - k + 1) * weight.shape()[2]
            }
            LayerOp::TtFc { map, .. } => map.out_dim(),
            LayerOp::TtConv { map, width, height, .. } => {
                let k = map.kernel.unwrap_or(1);
                (width - k + 1) * (height - k + 1) * map.out_dim()
            }
            LayerOp::AvgPool2 {
                width,
                height,
                channels,
            } => (width / 2) * (height / 2) * channels,
        }
    }

    /// Trainable tensors: weight (or cores) first, bias last.
    pub fn params(&self) -> Vec<&DenseTensor> {
        match &self.op {
            LayerOp::DenseFc { weight, bias } | LayerOp::DenseConv { weight, bias, .. } => vec![weight, bias],
            LayerOp::TtFc { cores, bias, .. } | LayerOp::TtConv { cores, bias, .. } => {
                cores.cores().iter().chain(std::iter::once(bias)).collect()
            }
            LayerOp::AvgPool2 { .. } => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseTensor> {
        match &mut self.op {
            LayerOp::DenseFc { weight, bias } | LayerOp::DenseConv { weight, bias, .. } => vec![weight, bias],
            LayerOp::TtFc { cores, bias, .. } | LayerOp::TtConv { cores, bias, .. } => {
                cores.cores_mut().iter_mut().chain(std::iter::once(bias)).collect()
            }
            LayerOp::AvgPool2 { .. } => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Dense weight (fc matrix or conv kernel), if this is a dense layer.
    pub fn dense_weight(&self) -> Option<&DenseTensor> {
        match &self.op {
            LayerOp::DenseFc { weight, .. } | LayerOp::DenseConv { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn dense_weight_mut(&mut self) -> Option<&mut DenseTensor> {
        match &mut self.op {
            LayerOp::DenseFc { weight, .. } | LayerOp::DenseConv { weight, .. } => Some(weight),
            _ => None,
        }
    }

    /// The dense weight folded into a TT-shaped tensor by `map`.
    pub fn tensorized_weight(&self, map: &TensorizationMap) -> Result<DenseTensor> {
        match &self.op {
            LayerOp::DenseFc { weight, .. } => tensorize_fc(weight, map),
            LayerOp::DenseConv { weight, .. } => tensorize_conv(weight, map),
            _ => Err(Error::InvalidLayer(format!(
                "{} layer has no dense weight",
                self.kind()
            ))),
        }
    }

    /// Replaces a dense layer by its TT-SVD at the target ranks, keeping the bias.
    pub fn decompose(&self, target: &TtTarget) -> Result<Layer> {
        let folded = self.tensorized_weight(&target.map)?;
        let cores = tt_svd(&folded, &target.ranks)?;
        let op = match &self.op {
            LayerOp::DenseFc { bias, .. } => LayerOp::TtFc {
                cores,
                map: target.map.clone(),
                bias: bias.clone(),
            },
            LayerOp::DenseConv {
                bias, width, height, ..
            } => LayerOp::TtConv {
                cores,
                map: target.map.clone(),
                bias: bias.clone(),
                width: *width,
                height: *height,
            },
            _ => unreachable!("tensorized_weight rejects non-dense layers"),
        };
        Ok(Layer {
            op,
            activation: self.activation,
        })
    }

    fn forward(&self, x: &[f64], rows: usize, cache: Option<&mut Cache>) -> Vec<f64> {
        let mut tt_cache = None;
        let mut conv_cols = None;
        let mut y = match &self.op {
            LayerOp::DenseFc { weight, bias } => {
                fc_forward_batch(weight.data(), bias.data(), x, rows, weight.shape()[1])
            }
            LayerOp::DenseConv {
                weight,
                bias,
                width,
                height,
            } => {
                let (k, m, n) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
                let mat = conv_matrix(weight);
                let cols = im2col(x, rows, *width, *height, n, k);
                let positions = (width - k + 1) * (height - k + 1);
                let y = fc_forward_batch(mat.data(), bias.data(), &cols, rows * positions, k * k * n);
                debug_assert_eq!(y.len(), rows * positions * m);
                conv_cols = Some(cols);
                y
            }
            LayerOp::TtFc { cores, map, bias } => {
                let geo = TtGeometry::new(cores, &map.out_factors, &map.in_factors).expect("validated at build");
                let (mut y, c) = tt_matrix_forward(cores, &geo, x, rows);
                add_bias_rows(&mut y, bias.data());
                tt_cache = Some(c);
                y
            }
            LayerOp::TtConv {
                cores,
                map,
                bias,
                width,
                height,
            } => {
                let k = map.kernel.expect("conv map");
                let (out_f, in_f) = (map.tt_out_factors(), map.tt_in_factors());
                let geo = TtGeometry::new(cores, &out_f, &in_f).expect("validated at build");
                let cols = im2col(x, rows, *width, *height, map.in_dim(), k);
                let positions = (width - k + 1) * (height - k + 1);
                let (mut y, c) = tt_matrix_forward(cores, &geo, &cols, rows * positions);
                add_bias_rows(&mut y, bias.data());
                tt_cache = Some(c);
                y
            }
            LayerOp::AvgPool2 {
                width,
                height,
                channels,
            } => avg_pool_forward(x, rows, *width, *height, *channels),
        };
        if self.activation == Activation::Relu {
            for v in &mut y {
                *v = v.max(0.0);
            }
        }
        if let Some(c) = cache {
            c.rows = rows;
            c.input = conv_cols.unwrap_or_else(|| x.to_vec());
            c.tt = tt_cache.unwrap_or_default();
            c.output = y.clone();
        }
        y
    }

    /// Gradients of every parameter (same order as [`Layer::params`]) and,
    /// if `want_input`, of the layer input.
    fn backward(&self, cache: &Cache, mut dy: Vec<f64>, want_input: bool) -> (Vec<DenseTensor>, Option<Vec<f64>>) {
        if self.activation == Activation::Relu {
            for (g, &o) in dy.iter_mut().zip(&cache.output) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let rows = cache.rows;
        let mut grads: Vec<DenseTensor> = self
            .params()
            .iter()
            .map(|p| DenseTensor::zeros(p.shape()).expect("param shapes are valid"))
            .collect();
        let dx = match &self.op {
            LayerOp::DenseFc { weight, .. } => {
                let (m, n) = (weight.shape()[0], weight.shape()[1]);
                let (gw, gb) = grads.split_at_mut(1);
                fc_backward_batch(
                    weight.data(),
                    &cache.input,
                    &dy,
                    rows,
                    m,
                    n,
                    gw[0].data_mut(),
                    gb[0].data_mut(),
                    want_input,
                )
            }
            LayerOp::DenseConv {
                weight, width, height, ..
            } => {
                let (k, m, n) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
                let mat = conv_matrix(weight);
                let positions = (width - k + 1) * (height - k + 1);
                let mut gmat = vec![0.0; m * k * k * n];
                let dcols = fc_backward_batch(
                    mat.data(),
                    &cache.input,
                    &dy,
                    rows * positions,
                    m,
                    k * k * n,
                    &mut gmat,
                    grads[1].data_mut(),
                    want_input,
                );
                let gmat = DenseTensor::new(vec![m, k * k * n], gmat).expect("shape matches");
                grads[0] = conv_matrix_to_kernel(&gmat, &conv_map(weight)).expect("shape matches");
                dcols.map(|c| col2im(&c, rows, *width, *height, n, k))
            }
            LayerOp::TtFc { cores, map, .. } => {
                let geo = TtGeometry::new(cores, &map.out_factors, &map.in_factors).expect("validated at build");
                let d = cores.order();
                bias_grad(&dy, grads[d].data_mut());
                tt_matrix_backward(cores, &geo, &cache.tt, &dy, &mut grads[..d], want_input)
            }
            LayerOp::TtConv {
                cores,
                map,
                width,
                height,
                ..
            } => {
                let k = map.kernel.expect("conv map");
                let (out_f, in_f) = (map.tt_out_factors(), map.tt_in_factors());
                let geo = TtGeometry::new(cores, &out_f, &in_f).expect("validated at build");
                let d = cores.order();
                bias_grad(&dy, grads[d].data_mut());
                tt_matrix_backward(cores, &geo, &cache.tt, &dy, &mut grads[..d], want_input)
                    .map(|c| col2im(&c, rows, *width, *height, map.in_dim(), k))
            }
            LayerOp::AvgPool2 {
                width,
                height,
                channels,
            } => want_input.then(|| avg_pool_backward(&dy, rows, *width, *height, *channels)),
        };
        (grads, dx)
    }
}

fn conv_map(kernel: &DenseTensor) -> TensorizationMap {
    let s = kernel.shape();
    TensorizationMap::conv(s[0], vec![s[2]], vec![s[3]]).expect("kernel extents are >= 1")
}

fn conv_matrix(kernel: &DenseTensor) -> DenseTensor {
    conv_kernel_to_matrix(kernel, &conv_map(kernel)).expect("kernel matches its own map")
}

fn bias_grad(dy: &[f64], gb: &mut [f64]) {
    for row in dy.chunks_exact(gb.len()) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
}

fn avg_pool_forward(x: &[f64], rows: usize, width: usize, height: usize, channels: usize) -> Vec<f64> {
    let (ow, oh) = (width / 2, height / 2);
    let mut out = vec![0.0; rows * ow * oh * channels];
    for b in 0..rows {
        for w in 0..ow {
            for h in 0..oh {
                let dst = ((b * ow + w) * oh + h) * channels;
                for (dw, dh) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = ((b * width + 2 * w + dw) * height + 2 * h + dh) * channels;
                    for c in 0..channels {
                        out[dst + c] += 0.25 * x[src + c];
                    }
                }
            }
        }
    }
    out
}

fn avg_pool_backward(dy: &[f64], rows: usize, width: usize, height: usize, channels: usize) -> Vec<f64> {
    let (ow, oh) = (width / 2, height / 2);
    let mut dx = vec![0.0; rows * width * height * channels];
    for b in 0..rows {
        for w in 0..ow {
            for h in 0..oh {
                let src = ((b * ow + w) * oh + h) * channels;
                for (dw, dh) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let dst = ((b * width + 2 * w + dw) * height + 2 * h + dh) * channels;
                    for c in 0..channels {
                        dx[dst + c] += 0.25 * dy[src + c];
                    }
                }
            }
        }
    }
    dx
}

/// Gradients for every layer, aligned with [`Layer::params`].
pub type Grads = Vec<Vec<DenseTensor>>;

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    caches: Vec<Cache>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidLayer("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::InvalidLayer(format!(
                    "layer {i} ({}) emits {} values but layer {} ({}) expects {}",
                    pair[0].kind(),
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].kind(),
                    pair[1].in_dim()
                )));
            }
        }
        let caches = vec![Cache::default(); layers.len()];
        Ok(Self { layers, caches })
    }

    pub fn from_specs(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let layers = specs.iter().map(|s| s.build(rng)).collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Swaps in a layer with the same input and output sizes.
    pub fn replace_layer(&mut self, index: usize, layer: Layer) -> Result<()> {
        let old = &self.layers[index];
        if old.in_dim() != layer.in_dim() || old.out_dim() != layer.out_dim() {
            return Err(Error::InvalidLayer(format!(
                "replacement for layer {index} changes its size from {}->{} to {}->{}",
                old.in_dim(),
                old.out_dim(),
                layer.in_dim(),
                layer.out_dim()
            )));
        }
        self.layers[index] = layer;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn check_input(&self, x: &[f64], rows: usize) -> Result<()> {
        if rows == 0 || x.len() != rows * self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "network input",
                left: vec![x.len()],
                right: vec![rows, self.input_dim()],
            });
        }
        Ok(())
    }

    /// Logits for `rows` samples without keeping intermediates.
    pub fn predict(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check_input(x, rows)?;
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h, rows, None);
        }
        Ok(h)
    }

    /// Training forward pass; keeps what [`Network::backward`] needs.
    pub fn forward(&mut self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check_input(x, rows)?;
        let mut h = x.to_vec();
        for (layer, cache) in self.layers.iter().zip(self.caches.iter_mut()) {
            h = layer.forward(&h, rows, Some(cache));
        }
        Ok(h)
    }

    /// Backpropagates `dlogits` through the last training forward pass.
    pub fn backward(&self, dlogits: &[f64]) -> Result<Grads> {
        let last = &self.caches[self.caches.len() - 1];
        if last.output.len() != dlogits.len() {
            return Err(Error::DimensionMismatch {
                op: "backward",
                left: vec![dlogits.len()],
                right: vec![last.output.len()],
            });
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut dy = dlogits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let (g, dx) = self.layers[i].backward(&self.caches[i], dy, i > 0);
            grads[i] = g;
            dy = dx.unwrap_or_default();
        }
        Ok(grads)
    }

    /// Mean cross-entropy over the batch and its gradients.
    pub fn loss_and_grads(&mut self, x: &[f64], labels: &[usize]) -> Result<(f64, Grads)> {
        let logits = self.forward(x, labels.len())?;
        let (loss, dlogits) = cross_entropy(&logits, labels, self.output_dim())?;
        let grads = self.backward(&dlogits)?;
        Ok((loss, grads))
    }

    pub fn zero_grads(&self) -> Grads {
        self.layers
            .iter()
            .map(|l| {
                l.params()
                    .iter()
                    .map(|p| DenseTensor::zeros(p.shape()).expect("param shapes are valid"))
                    .collect()
            })
            .collect()
    }
}
