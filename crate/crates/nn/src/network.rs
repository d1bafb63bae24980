//! Layer specifications and a sequential network with cached activations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::ops::{self, BnBatch, BN_MOMENTUM};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
    },
    Conv1d {
        filters: usize,
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Weights are stored `[channels, filters, kernel]`.
    TransposedConv1d {
        filters: usize,
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    Batchnorm {
        channels: usize,
    },
    Relu,
    Maxpool2x2,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::TransposedConv1d { .. } => "transposed_conv1d",
            LayerSpec::Batchnorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxpool2x2 => "maxpool2x2",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// (weight, bias) sizes; batchnorm reports (gamma, beta).
    pub fn param_sizes(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                filters,
                channels,
                kernel_h,
                kernel_w,
                ..
            } => (filters * channels * kernel_h * kernel_w, filters),
            LayerSpec::Conv1d {
                filters,
                channels,
                kernel,
                ..
            }
            | LayerSpec::TransposedConv1d {
                filters,
                channels,
                kernel,
                ..
            } => (filters * channels * kernel, filters),
            LayerSpec::Batchnorm { channels } => (channels, channels),
            LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs),
            _ => (0, 0),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                channels,
                kernel_h,
                kernel_w,
                ..
            } => channels * kernel_h * kernel_w,
            LayerSpec::Conv1d {
                channels, kernel, ..
            }
            | LayerSpec::TransposedConv1d {
                channels, kernel, ..
            } => channels * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 1,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(NnError::Shape(format!("{}: {msg}", self.name())));
        let valid = |len: usize, k: usize, s: usize| -> Option<usize> {
            (s >= 1 && k >= 1 && len >= k).then(|| (len - k) / s + 1)
        };
        match self {
            LayerSpec::Conv2d {
                filters,
                channels,
                kernel_h,
                kernel_w,
                stride,
            } => match input {
                [c, h, w] if c == channels => {
                    match (valid(*h, *kernel_h, *stride), valid(*w, *kernel_w, *stride)) {
                        (Some(ho), Some(wo)) => Ok(vec![*filters, ho, wo]),
                        _ => bad(format!("kernel {kernel_h}x{kernel_w} stride {stride} on {h}x{w}")),
                    }
                }
                _ => bad(format!("expects [{channels}, H, W], got {input:?}")),
            },
            LayerSpec::Conv1d {
                filters,
                channels,
                kernel,
                stride,
            } => match input {
                [c, l] if c == channels => match valid(*l, *kernel, *stride) {
                    Some(lo) => Ok(vec![*filters, lo]),
                    None => bad(format!("kernel {kernel} stride {stride} on length {l}")),
                },
                _ => bad(format!("expects [{channels}, L], got {input:?}")),
            },
            LayerSpec::TransposedConv1d {
                filters,
                channels,
                kernel,
                stride,
            } => match input {
                [c, l] if c == channels && *l >= 1 && *stride >= 1 && *kernel >= 1 => {
                    Ok(vec![*filters, (l - 1) * stride + kernel])
                }
                _ => bad(format!("expects [{channels}, L], got {input:?}")),
            },
            LayerSpec::Batchnorm { channels } => match input.first() {
                Some(c) if c == channels => Ok(input.to_vec()),
                _ => bad(format!("expects {channels} channels, got {input:?}")),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Maxpool2x2 => match input {
                [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
                _ => bad(format!("expects [C, H>=2, W>=2], got {input:?}")),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() == input.iter().product::<usize>() {
                    Ok(shape.clone())
                } else {
                    bad(format!("{input:?} to {shape:?}"))
                }
            }
            LayerSpec::Dense { inputs, outputs } => match input {
                [n] if n == inputs => Ok(vec![*outputs]),
                _ => bad(format!("expects [{inputs}], got {input:?}")),
            },
            LayerSpec::Softmax => match input {
                [_] => Ok(input.to_vec()),
                _ => bad(format!("expects a vector, got {input:?}")),
            },
        }
    }
}

/// Per-sample shapes from the input through every layer.
pub fn shape_walk(input: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input.to_vec()];
    for l in layers {
        let next = l.output_shape(shapes.last().expect("non-empty"))?;
        shapes.push(next);
    }
    Ok(shapes)
}

/// Trainable and running parameters of one layer. Batchnorm keeps gamma in
/// `weight` and beta in `bias`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor),
    Output(Tensor),
    Pool(Vec<usize>, Vec<usize>),
    Norm(BnBatch),
    Shape(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams>,
    grads: Vec<(Vec<f64>, Vec<f64>)>,
    shapes: Vec<Vec<usize>>,
    cache: Option<Vec<Cache>>,
}

impl Network {
    /// Builds a network with He-initialized weights and zero biases.
    pub fn build(input_shape: &[usize], layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(layers.len());
        for l in &layers {
            let (nw, nb) = l.param_sizes();
            let p = match l {
                LayerSpec::Batchnorm { channels } => LayerParams {
                    weight: vec![1.0; *channels],
                    bias: vec![0.0; *channels],
                    running_mean: vec![0.0; *channels],
                    running_var: vec![1.0; *channels],
                },
                _ => {
                    let std = (2.0 / l.fan_in() as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    LayerParams {
                        weight: (0..nw).map(|_| normal.sample(&mut rng)).collect(),
                        bias: vec![0.0; nb],
                        ..Default::default()
                    }
                }
            };
            params.push(p);
        }
        Self::from_parts(input_shape, layers, params)
    }

    /// Assembles a network from stored parameters, checking every size.
    pub fn from_parts(
        input_shape: &[usize],
        layers: Vec<LayerSpec>,
        params: Vec<LayerParams>,
    ) -> Result<Self> {
        if params.len() != layers.len() {
            return Err(NnError::Shape(format!(
                "{} layers but {} parameter sets",
                layers.len(),
                params.len()
            )));
        }
        let shapes = shape_walk(input_shape, &layers)?;
        for (i, (l, p)) in layers.iter().zip(&params).enumerate() {
            let (nw, nb) = l.param_sizes();
            let (nm, nv) = match l {
                LayerSpec::Batchnorm { channels } => (*channels, *channels),
                _ => (0, 0),
            };
            if p.weight.len() != nw
                || p.bias.len() != nb
                || p.running_mean.len() != nm
                || p.running_var.len() != nv
            {
                return Err(NnError::Shape(format!(
                    "layer {i} ({}) parameter sizes do not match its spec",
                    l.name()
                )));
            }
            let all = p.weight.iter().chain(&p.bias).chain(&p.running_mean).chain(&p.running_var);
            if all.clone().any(|v| !v.is_finite()) {
                return Err(NnError::Domain(format!("layer {i} holds non-finite parameters")));
            }
        }
        let grads = params
            .iter()
            .map(|p| (vec![0.0; p.weight.len()], vec![0.0; p.bias.len()]))
            .collect();
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            params,
            grads,
            shapes,
            cache: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    /// Per-sample shapes after each layer, starting with the input.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    /// Gradients from the last backward pass, as (weight, bias) per layer.
    pub fn grads(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.grads
    }

    /// Number of trainable values.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Batchnorm { .. }))
    }

    /// Trainable buffers paired with their gradients, in a fixed order.
    pub fn slots(&mut self) -> Vec<(&mut [f64], &[f64])> {
        let mut out = Vec::new();
        for (p, g) in self.params.iter_mut().zip(&self.grads) {
            out.push((p.weight.as_mut_slice(), g.0.as_slice()));
            out.push((p.bias.as_mut_slice(), g.1.as_slice()));
        }
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::Shape(format!(
                "network expects [B, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        if x.batch() == 0 {
            return Err(NnError::Shape("empty batch".into()));
        }
        Ok(())
    }

    /// Inference pass; batchnorm uses running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            a = self.apply(i, l, &a, None)?;
        }
        Ok(a)
    }

    /// Training pass: batch statistics, running-stat update, cached
    /// activations for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.cache = None;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for i in 0..self.layers.len() {
            let layer = self.layers[i].clone();
            a = self.apply(i, &layer, &a, Some(&mut caches))?;
        }
        for (p, cache) in self.params.iter_mut().zip(&caches) {
            if let Cache::Norm(stats) = cache {
                let unbias = stats.count as f64 / (stats.count as f64 - 1.0).max(1.0);
                for c in 0..p.running_mean.len() {
                    p.running_mean[c] = (1.0 - BN_MOMENTUM) * p.running_mean[c] + BN_MOMENTUM * stats.mean[c];
                    p.running_var[c] =
                        (1.0 - BN_MOMENTUM) * p.running_var[c] + BN_MOMENTUM * stats.var[c] * unbias;
                }
            }
        }
        self.cache = Some(caches);
        Ok(a)
    }

    fn apply(
        &self,
        i: usize,
        layer: &LayerSpec,
        a: &Tensor,
        caches: Option<&mut Vec<Cache>>,
    ) -> Result<Tensor> {
        let p = &self.params[i];
        let train = caches.is_some();
        let (out, cache) = match *layer {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => (
                ops::conv2d_forward(a, &p.weight, &p.bias, filters, (kernel_h, kernel_w), stride)?,
                Cache::Input(a.clone()),
            ),
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                ..
            } => (
                ops::conv1d_forward(a, &p.weight, &p.bias, filters, kernel, stride)?,
                Cache::Input(a.clone()),
            ),
            LayerSpec::TransposedConv1d {
                filters,
                kernel,
                stride,
                ..
            } => (
                ops::transposed_conv1d_forward(a, &p.weight, &p.bias, filters, kernel, stride)?,
                Cache::Input(a.clone()),
            ),
            LayerSpec::Batchnorm { .. } => {
                if train {
                    let (y, stats) = ops::batchnorm_train_forward(a, &p.weight, &p.bias)?;
                    (y, Cache::Norm(stats))
                } else {
                    let y = ops::batchnorm_infer(a, &p.weight, &p.bias, &p.running_mean, &p.running_var)?;
                    (y, Cache::Shape(vec![]))
                }
            }
            LayerSpec::Relu => (ops::relu_forward(a), Cache::Input(a.clone())),
            LayerSpec::Maxpool2x2 => {
                let (y, arg) = ops::maxpool2x2_forward(a)?;
                (y, Cache::Pool(a.shape().to_vec(), arg))
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => {
                let mut shape = vec![a.batch()];
                shape.extend_from_slice(&self.shapes[i + 1]);
                (a.clone().reshape(shape)?, Cache::Shape(a.shape().to_vec()))
            }
            LayerSpec::Dense { outputs, .. } => (
                ops::dense_forward(a, &p.weight, &p.bias, outputs)?,
                Cache::Input(a.clone()),
            ),
            LayerSpec::Softmax => {
                let y = ops::softmax_forward(a)?;
                (y.clone(), Cache::Output(y))
            }
        };
        if let Some(c) = caches {
            c.push(cache);
        }
        Ok(out)
    }

    /// Back-propagates `grad` (gradient of the loss w.r.t. the output of the
    /// last training pass). Parameter gradients are overwritten; the
    /// gradient w.r.t. the network input is returned.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let caches = self.cache.take().ok_or(NnError::State)?;
        let mut expect = vec![grad.batch()];
        expect.extend_from_slice(self.output_shape());
        if grad.shape() != expect.as_slice() {
            return Err(NnError::Shape(format!(
                "loss gradient {:?}, expected {expect:?}",
                grad.shape()
            )));
        }
        for g in &mut self.grads {
            g.0.iter_mut().for_each(|v| *v = 0.0);
            g.1.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = grad.clone();
        for (i, cache) in caches.iter().enumerate().rev() {
            let layer = &self.layers[i];
            let p = &self.params[i];
            let (dw, db) = &mut self.grads[i];
            g = match (layer, cache) {
                (
                    LayerSpec::Conv2d {
                        filters,
                        kernel_h,
                        kernel_w,
                        stride,
                        ..
                    },
                    Cache::Input(x),
                ) => ops::conv2d_backward(x, &p.weight, &g, *filters, (*kernel_h, *kernel_w), *stride, dw, db)?,
                (
                    LayerSpec::Conv1d {
                        filters,
                        kernel,
                        stride,
                        ..
                    },
                    Cache::Input(x),
                ) => ops::conv1d_backward(x, &p.weight, &g, *filters, *kernel, *stride, dw, db)?,
                (
                    LayerSpec::TransposedConv1d {
                        filters,
                        kernel,
                        stride,
                        ..
                    },
                    Cache::Input(x),
                ) => ops::transposed_conv1d_backward(x, &p.weight, &g, *filters, *kernel, *stride, dw, db)?,
                (LayerSpec::Batchnorm { .. }, Cache::Norm(stats)) => {
                    ops::batchnorm_backward(&g, stats, &p.weight, dw, db)?
                }
                (LayerSpec::Relu, Cache::Input(x)) => ops::relu_backward(x, &g),
                (LayerSpec::Maxpool2x2, Cache::Pool(shape, arg)) => ops::maxpool2x2_backward(shape, arg, &g),
                (LayerSpec::Flatten | LayerSpec::Reshape { .. }, Cache::Shape(shape)) => {
                    g.reshape(shape.clone())?
                }
                (LayerSpec::Dense { outputs, .. }, Cache::Input(x)) => {
                    ops::dense_backward(x, &p.weight, &g, *outputs, dw, db)?
                }
                (LayerSpec::Softmax, Cache::Output(y)) => ops::softmax_backward(y, &g),
                _ => return Err(NnError::State),
            };
        }
        Ok(g)
    }

    /// Drops cached activations without touching parameters.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
