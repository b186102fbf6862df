//! The convolutional classifier: layer stack, flat parameter store, forward
//! inference and per-sample backward passes.

mod checkpoint;
mod grad;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use grad::PerSampleGrads;
pub use optim::Sgd;

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::{self, Conv2dConfig, ConvGeometry};
use crate::rng::{self, DropoutStream, Stream};
use crate::tensor::Tensor;

pub const MNIST_INPUT: [usize; 3] = [1, 28, 28];
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2x2,
    Relu,
    Dropout {
        p: f64,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride: 1,
            padding: 0,
        }
    }

    pub fn dense(out_features: usize) -> Self {
        LayerSpec::Dense { out_features }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv2d(out={out_channels},k={kernel},s={stride},p={padding})"),
            LayerSpec::MaxPool2x2 => write!(f, "maxpool2x2"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Dropout { p } => write!(f, "dropout(p={p})"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Dense { out_features } => write!(f, "dense(out={out_features})"),
        }
    }
}

/// Architecture knobs of the default network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchConfig {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv1_channels: 8,
            conv2_channels: 16,
            kernel: 5,
            hidden: 32,
            dropout: 0.25,
        }
    }
}

impl ArchConfig {
    /// conv → relu → pool → conv → relu → pool → dropout → flatten → dense → relu → dense(10).
    ///
    /// Trainable/dropout layers: two convolutions, one dropout, two dense.
    pub fn layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(self.conv1_channels, self.kernel),
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::conv(self.conv2_channels, self.kernel),
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Dropout { p: self.dropout },
            LayerSpec::Flatten,
            LayerSpec::dense(self.hidden),
            LayerSpec::Relu,
            LayerSpec::dense(MNIST_CLASSES),
        ]
    }
}

pub fn default_architecture() -> Vec<LayerSpec> {
    ArchConfig::default().layers()
}

/// Location of one trainable layer's parameters in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlice {
    pub layer: usize,
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
    pub bias_len: usize,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv {
        geom: ConvGeometry,
        slice: ParamSlice,
    },
    MaxPool {
        shape: [usize; 3],
        out_len: usize,
    },
    Relu,
    Dropout {
        p: f64,
    },
    Flatten,
    Dense {
        n_in: usize,
        n_out: usize,
        slice: ParamSlice,
    },
}

#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Eval,
    /// Dropout active; masks drawn from `dropout` keyed by `(step, position)`.
    Train {
        dropout: DropoutStream,
        step: u64,
    },
}

#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    input_shape: [usize; 3],
    n_classes: usize,
    params: Vec<f64>,
    slices: Vec<ParamSlice>,
}

/// Per-layer record of one sample's forward pass; consumed by [`SampleTrace::backward`].
#[derive(Debug)]
pub struct SampleTrace {
    /// `acts[i]` is the input of layer `i`; the last entry is the logits.
    acts: Vec<Vec<f64>>,
    argmax: Vec<Option<Vec<usize>>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl SampleTrace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace has logits")
    }

    /// Accumulates the parameter gradient of the loss whose logit-gradient is
    /// `grad_logits` into `row` (length `param_count`).
    pub fn backward(self, net: &Network, grad_logits: &[f64], row: &mut [f64]) {
        let mut grad = grad_logits.to_vec();
        for (i, layer) in net.layers.iter().enumerate().rev() {
            let need_input_grad = i > 0;
            let input = &self.acts[i];
            match layer {
                Layer::Conv { geom, slice } => {
                    let (w, _) = net.layer_params(slice);
                    let mut gx = if need_input_grad {
                        vec![0.0; input.len()]
                    } else {
                        Vec::new()
                    };
                    let (gw, gb) = split_row(row, slice);
                    ops::conv2d_backward_raw(
                        geom,
                        input,
                        w,
                        &grad,
                        need_input_grad.then_some(gx.as_mut_slice()),
                        gw,
                        gb,
                    );
                    grad = gx;
                }
                Layer::Dense { slice, .. } => {
                    let (w, _) = net.layer_params(slice);
                    let mut gx = if need_input_grad {
                        vec![0.0; input.len()]
                    } else {
                        Vec::new()
                    };
                    let (gw, gb) = split_row(row, slice);
                    ops::dense_backward_raw(w, input, &grad, need_input_grad.then_some(gx.as_mut_slice()), gw, gb);
                    grad = gx;
                }
                Layer::MaxPool { .. } => {
                    let mut gx = vec![0.0; input.len()];
                    let argmax = self.argmax[i].as_ref().expect("pool argmax recorded");
                    ops::maxpool2x2_backward_raw(argmax, &grad, &mut gx);
                    grad = gx;
                }
                Layer::Relu => {
                    let mut gx = vec![0.0; input.len()];
                    ops::relu_backward_raw(&self.acts[i + 1], &grad, &mut gx);
                    grad = gx;
                }
                Layer::Dropout { .. } => {
                    if let Some(mask) = &self.masks[i] {
                        for (g, m) in grad.iter_mut().zip(mask) {
                            *g *= m;
                        }
                    }
                }
                Layer::Flatten => {}
            }
        }
    }
}

fn split_row<'a>(row: &'a mut [f64], slice: &ParamSlice) -> (&'a mut [f64], &'a mut [f64]) {
    let (w, rest) = row[slice.weight_offset..].split_at_mut(slice.weight_len);
    let b_start = slice.bias_offset - slice.weight_offset - slice.weight_len;
    (w, &mut rest[b_start..b_start + slice.bias_len])
}

impl Network {
    /// Validates that `arch` composes from `input_shape` to `n_classes`
    /// logits and initializes parameters (Kaiming-uniform with bound `1/√fan_in`, zero bias).
    pub fn build(arch: &[LayerSpec], input_shape: [usize; 3], n_classes: usize, seed: u64) -> Result<Self> {
        let mut shape: Vec<usize> = input_shape.to_vec();
        let mut layers = Vec::with_capacity(arch.len());
        let mut slices = Vec::new();
        let mut offset = 0;
        for (i, spec) in arch.iter().enumerate() {
            let err = |msg: String| Error::Config(format!("layer {i} ({spec}): {msg}"));
            let layer = match *spec {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let &[c, h, w] = shape.as_slice() else {
                        return Err(err(format!("needs [c,h,w] input, got {shape:?}")));
                    };
                    let geom = ConvGeometry::new(
                        [c, h, w],
                        [out_channels, c, kernel, kernel],
                        Conv2dConfig { stride, padding },
                    )
                    .map_err(|e| err(e.to_string()))?;
                    let slice = ParamSlice {
                        layer: i,
                        weight_offset: offset,
                        weight_len: geom.kernel_len(),
                        bias_offset: offset + geom.kernel_len(),
                        bias_len: out_channels,
                    };
                    offset += slice.weight_len + slice.bias_len;
                    slices.push(slice);
                    shape = vec![out_channels, geom.out_h, geom.out_w];
                    Layer::Conv { geom, slice }
                }
                LayerSpec::MaxPool2x2 => {
                    let &[c, h, w] = shape.as_slice() else {
                        return Err(err(format!("needs [c,h,w] input, got {shape:?}")));
                    };
                    if h < 2 || w < 2 {
                        return Err(err(format!("input {h}x{w} too small")));
                    }
                    shape = vec![c, h / 2, w / 2];
                    Layer::MaxPool {
                        shape: [c, h, w],
                        out_len: c * (h / 2) * (w / 2),
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Dropout { p } => {
                    ops::check_dropout_rate(p).map_err(|e| err(e.to_string()))?;
                    Layer::Dropout { p }
                }
                LayerSpec::Flatten => {
                    shape = vec![shape.iter().product()];
                    Layer::Flatten
                }
                LayerSpec::Dense { out_features } => {
                    let &[n_in] = shape.as_slice() else {
                        return Err(err(format!("needs flat input, got {shape:?}")));
                    };
                    if out_features == 0 {
                        return Err(err("zero output width".into()));
                    }
                    let slice = ParamSlice {
                        layer: i,
                        weight_offset: offset,
                        weight_len: n_in * out_features,
                        bias_offset: offset + n_in * out_features,
                        bias_len: out_features,
                    };
                    offset += slice.weight_len + slice.bias_len;
                    slices.push(slice);
                    shape = vec![out_features];
                    Layer::Dense {
                        n_in,
                        n_out: out_features,
                        slice,
                    }
                }
            };
            layers.push(layer);
        }
        if shape != [n_classes] {
            return Err(Error::Config(format!(
                "architecture ends in shape {shape:?}, expected [{n_classes}]"
            )));
        }

        let mut params = vec![0.0; offset];
        let mut init = rng::stream(seed, Stream::Init);
        for layer in &layers {
            let (fan_in, slice) = match layer {
                Layer::Conv { geom, slice } => (geom.c_in * geom.kh * geom.kw, slice),
                Layer::Dense { n_in, slice, .. } => (*n_in, slice),
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[slice.weight_offset..slice.weight_offset + slice.weight_len] {
                *p = init.random_range(-bound..bound);
            }
        }

        Ok(Self {
            specs: arch.to_vec(),
            layers,
            input_shape,
            n_classes,
            params,
            slices,
        })
    }

    /// The default MNIST network.
    pub fn mnist(arch: &ArchConfig, seed: u64) -> Result<Self> {
        Self::build(&arch.layers(), MNIST_INPUT, MNIST_CLASSES, seed)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Input(format!(
                "parameter vector has {} entries, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    fn layer_params(&self, slice: &ParamSlice) -> (&[f64], &[f64]) {
        (
            &self.params[slice.weight_offset..slice.weight_offset + slice.weight_len],
            &self.params[slice.bias_offset..slice.bias_offset + slice.bias_len],
        )
    }

    /// Hex SHA-256 of the canonical architecture description.
    pub fn architecture_digest(&self) -> String {
        let mut text = format!("input={:?};classes={};", self.input_shape, self.n_classes);
        for spec in &self.specs {
            text.push_str(&spec.to_string());
            text.push(';');
        }
        crate::data::sha256_hex(text.as_bytes())
    }

    /// Forward pass of one sample, recording what backward needs.
    /// `dropout = None` disables dropout (evaluation).
    pub fn forward_sample<R: Rng + ?Sized>(&self, x: &[f64], mut dropout: Option<&mut R>) -> SampleTrace {
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        let mut argmax = vec![None; n];
        let mut masks = vec![None; n];
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = &acts[i];
            let out = match layer {
                Layer::Conv { geom, slice } => {
                    let (w, b) = self.layer_params(slice);
                    let mut out = vec![0.0; geom.output_len()];
                    ops::conv2d_forward_raw(geom, input, w, b, &mut out);
                    out
                }
                Layer::MaxPool { shape, out_len } => {
                    let mut out = vec![0.0; *out_len];
                    let mut idx = vec![0; *out_len];
                    ops::maxpool2x2_forward_raw(*shape, input, &mut out, &mut idx);
                    argmax[i] = Some(idx);
                    out
                }
                Layer::Relu => {
                    let mut out = vec![0.0; input.len()];
                    ops::relu_forward_raw(input, &mut out);
                    out
                }
                Layer::Dropout { p } => match dropout.as_deref_mut() {
                    Some(rng) if *p > 0.0 => {
                        let mask = ops::dropout_mask(input.len(), *p, rng);
                        let out = input.iter().zip(&mask).map(|(a, m)| a * m).collect();
                        masks[i] = Some(mask);
                        out
                    }
                    _ => input.clone(),
                },
                Layer::Flatten => input.clone(),
                Layer::Dense { n_out, slice, .. } => {
                    let (w, b) = self.layer_params(slice);
                    let mut out = vec![0.0; *n_out];
                    ops::dense_forward_raw(w, b, input, &mut out);
                    out
                }
            };
            acts.push(out);
        }
        SampleTrace { acts, argmax, masks }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != self.input_shape {
            return Err(Error::Input(format!(
                "batch shape {shape:?}, expected [B, {}, {}, {}]",
                self.input_shape[0], self.input_shape[1], self.input_shape[2]
            )));
        }
        Ok(shape[0])
    }

    /// Traced forward pass over a batch; logits are `[B, n_classes]`.
    pub fn forward_traced(&self, batch: &Tensor, mode: Mode) -> Result<(Tensor, Vec<SampleTrace>)> {
        let b = self.check_batch(batch)?;
        let traces: Vec<SampleTrace> = (0..b)
            .into_par_iter()
            .map(|i| self.trace_one(batch.outer(i), mode, i))
            .collect();
        let logits = traces.iter().flat_map(|t| t.logits().iter().copied()).collect();
        Ok((Tensor::new(vec![b, self.n_classes], logits)?, traces))
    }

    pub(crate) fn trace_one(&self, x: &[f64], mode: Mode, position: usize) -> SampleTrace {
        match mode {
            Mode::Eval => self.forward_sample::<rand_chacha::ChaCha20Rng>(x, None),
            Mode::Train { dropout, step } => {
                let mut rng = dropout.for_sample(step, position as u64);
                self.forward_sample(x, Some(&mut rng))
            }
        }
    }

    /// Logits `[B, n_classes]`.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        let b = self.check_batch(batch)?;
        let rows: Vec<Vec<f64>> = (0..b)
            .into_par_iter()
            .map(|i| self.trace_one(batch.outer(i), mode, i).acts.pop().expect("logits"))
            .collect();
        Tensor::new(vec![b, self.n_classes], rows.concat())
    }

    /// Mean cross-entropy and accuracy of eval-mode predictions.
    pub fn evaluate(&self, images: &Tensor, labels: &[usize]) -> Result<Evaluation> {
        let b = self.check_batch(images)?;
        if b != labels.len() {
            return Err(Error::Input(format!("{b} images but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Input(format!("label {bad} out of range")));
        }
        let per_sample: Vec<(f64, bool)> = (0..b)
            .into_par_iter()
            .map(|i| {
                let trace = self.trace_one(images.outer(i), Mode::Eval, i);
                let logits = trace.logits();
                let mut scratch = vec![0.0; logits.len()];
                let loss = ops::softmax_cross_entropy_raw(logits, labels[i], &mut scratch);
                (loss, argmax(logits) == labels[i])
            })
            .collect();
        let loss = per_sample.iter().map(|p| p.0).sum::<f64>() / b.max(1) as f64;
        let correct = per_sample.iter().filter(|p| p.1).count();
        Ok(Evaluation {
            loss,
            accuracy: correct as f64 / b.max(1) as f64,
            count: b,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Index of the largest entry (first on ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
