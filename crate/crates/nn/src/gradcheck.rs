//! Central finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{cross_entropy, kl_gaussian_batch, mse, one_hot, LossKind};
use crate::network::{LayerSpec, Network};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that two gradients that are
/// both essentially zero compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient<F: FnMut(&[f64]) -> Result<f64>>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// A loss over the network output with a fixed target.
#[derive(Debug, Clone)]
pub struct LossHead {
    pub kind: LossKind,
    pub target: Option<Tensor>,
}

impl LossHead {
    pub fn eval(&self, out: &Tensor) -> Result<(f64, Tensor)> {
        match self.kind {
            LossKind::CrossEntropy => cross_entropy(out, self.target.as_ref().expect("target")),
            LossKind::Mse => mse(out, self.target.as_ref().expect("target")),
            LossKind::KlGaussian => kl_gaussian_batch(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub values_checked: usize,
}

/// Compares backward-pass gradients of every parameter and of the input
/// against central differences of the training-mode loss.
pub fn check_network(net: &Network, x: &Tensor, head: &LossHead) -> Result<GradCheckReport> {
    let mut n = net.clone();
    let out = n.forward_train(x)?;
    let (_, g) = head.eval(&out)?;
    let dx = n.backward(&g)?;
    let grads = n.grads().to_vec();

    let loss_at = |net: &mut Network, x: &Tensor| -> Result<f64> {
        let out = net.forward_train(x)?;
        net.clear_cache();
        Ok(head.eval(&out)?.0)
    };

    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut probe = net.clone();
    for layer in 0..net.params().len() {
        for which in 0..2 {
            let base = if which == 0 {
                net.params()[layer].weight.clone()
            } else {
                net.params()[layer].bias.clone()
            };
            if base.is_empty() {
                continue;
            }
            let numeric = numeric_gradient(
                |v| {
                    let p = &mut probe.params_mut()[layer];
                    if which == 0 {
                        p.weight.copy_from_slice(v);
                    } else {
                        p.bias.copy_from_slice(v);
                    }
                    loss_at(&mut probe, x)
                },
                &base,
                FD_STEP,
            )?;
            let analytic = if which == 0 { &grads[layer].0 } else { &grads[layer].1 };
            worst = worst.max(max_relative_error(analytic, &numeric));
            count += base.len();
            let p = &mut probe.params_mut()[layer];
            if which == 0 {
                p.weight = base;
            } else {
                p.bias = base;
            }
        }
    }
    let shape = x.shape().to_vec();
    let numeric = numeric_gradient(
        |v| loss_at(&mut probe, &Tensor::new(shape.clone(), v.to_vec())?),
        x.data(),
        FD_STEP,
    )?;
    worst = worst.max(max_relative_error(dx.data(), &numeric));
    count += x.len();
    Ok(GradCheckReport {
        max_rel_error: worst,
        values_checked: count,
    })
}

/// One network in the layer-by-loss suite.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub layer: &'static str,
    pub loss: LossKind,
    pub shape_index: usize,
    pub network: Network,
    pub input: Tensor,
    pub head: LossHead,
}

pub const SUITE_LAYERS: [&str; 10] = [
    "conv2d",
    "conv1d",
    "transposed_conv1d",
    "batchnorm",
    "relu",
    "maxpool2x2",
    "flatten",
    "reshape",
    "dense",
    "softmax",
];

const SUITE_BATCH: usize = 3;
const HEAD_WIDTH: usize = 4;

/// The layer under test and its per-sample input shape for shape index `c`.
fn layer_case(layer: &str, c: usize) -> (LayerSpec, Vec<usize>) {
    match layer {
        "conv2d" => {
            let channels = 1 + c % 2;
            (
                LayerSpec::Conv2d {
                    filters: 1 + c % 3,
                    channels,
                    kernel_h: 2,
                    kernel_w: 1 + c % 2,
                    stride: 1 + c % 2,
                },
                vec![channels, 3 + c, 4 + c % 3],
            )
        }
        "conv1d" => {
            let channels = 1 + c % 3;
            (
                LayerSpec::Conv1d {
                    filters: 2,
                    channels,
                    kernel: 2 + c % 3,
                    stride: 1 + c % 2,
                },
                vec![channels, 6 + 2 * c],
            )
        }
        "transposed_conv1d" => {
            let channels = 1 + c % 2;
            (
                LayerSpec::TransposedConv1d {
                    filters: 1 + c % 3,
                    channels,
                    kernel: 2 + c % 3,
                    stride: 1 + c % 2,
                },
                vec![channels, 3 + c],
            )
        }
        "batchnorm" => {
            let shape = match c % 3 {
                0 => vec![2 + c],
                1 => vec![2, 3 + c],
                _ => vec![1 + c % 2, 3, 2 + c % 2],
            };
            (LayerSpec::Batchnorm { channels: shape[0] }, shape)
        }
        "relu" => (LayerSpec::Relu, vec![5 + c]),
        "maxpool2x2" => (LayerSpec::Maxpool2x2, vec![1 + c % 2, 3 + c, 2 + c % 3]),
        "flatten" => (LayerSpec::Flatten, vec![2, 1 + c, 2]),
        "reshape" => (LayerSpec::Reshape { shape: vec![2, 3 + c] }, vec![6 + 2 * c]),
        "dense" => (
            LayerSpec::Dense {
                inputs: 3 + c,
                outputs: 2 + c,
            },
            vec![3 + c],
        ),
        "softmax" => (LayerSpec::Softmax, vec![2 + c]),
        other => panic!("unknown suite layer {other}"),
    }
}

/// Builds the network for one (layer, loss, shape) combination: the layer
/// under test, a flatten and a dense adapter to a small head, and a softmax
/// when the loss is cross-entropy.
pub fn suite_case(layer: &'static str, loss: LossKind, c: usize, seed: u64) -> Result<SuiteCase> {
    let (spec, shape) = layer_case(layer, c);
    let out = spec.output_shape(&shape)?;
    let width: usize = out.iter().product();
    let mut layers = vec![
        spec,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: width,
            outputs: HEAD_WIDTH,
        },
    ];
    if loss == LossKind::CrossEntropy {
        layers.push(LayerSpec::Softmax);
    }
    let mut net = Network::build(&shape, layers, seed)?;
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Perturb zero biases and unit gammas so every parameter matters.
    for p in net.params_mut() {
        p.bias.iter_mut().for_each(|b| *b += r.random_range(-0.5..0.5));
        if !p.running_mean.is_empty() {
            p.weight.iter_mut().for_each(|w| *w += r.random_range(-0.5..0.5));
        }
    }
    let n: usize = shape.iter().product();
    let mut full = vec![SUITE_BATCH];
    full.extend_from_slice(&shape);
    let mut values: Vec<f64> = (0..SUITE_BATCH * n).map(|_| r.random_range(-1.0..1.0)).collect();
    if layer == "relu" {
        // Central differences straddling the kink are meaningless.
        values.iter_mut().filter(|v| v.abs() < 1e-2).for_each(|v| *v = v.signum() * 1e-2 + *v);
    }
    if layer == "maxpool2x2" {
        // Distinct, evenly spaced values in random order: no near-ties in a window.
        let step = 2.0 / values.len() as f64;
        values = (0..values.len()).map(|i| -1.0 + step * (i as f64 + 0.5)).collect();
        values.shuffle(&mut r);
    }
    let input = Tensor::new(full, values)?;
    let target = match loss {
        LossKind::CrossEntropy => {
            let labels: Vec<usize> = (0..SUITE_BATCH).map(|_| r.random_range(0..HEAD_WIDTH)).collect();
            Some(one_hot(&labels, HEAD_WIDTH)?)
        }
        LossKind::Mse => Some(Tensor::new(
            vec![SUITE_BATCH, HEAD_WIDTH],
            (0..SUITE_BATCH * HEAD_WIDTH).map(|_| r.random_range(-1.0..1.0)).collect(),
        )?),
        LossKind::KlGaussian => None,
    };
    Ok(SuiteCase {
        layer,
        loss,
        shape_index: c,
        network: net,
        input,
        head: LossHead { kind: loss, target },
    })
}

/// Every layer kind crossed with every loss on `shapes` shapes each.
pub fn gradient_suite(shapes: usize, seed: u64) -> Result<Vec<(SuiteCase, GradCheckReport)>> {
    let mut out = Vec::new();
    for (li, layer) in SUITE_LAYERS.iter().enumerate() {
        for (ki, loss) in LossKind::ALL.iter().enumerate() {
            for c in 0..shapes {
                let s = seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((li * 100 + ki * 10 + c) as u64);
                let case = suite_case(layer, *loss, c, s)?;
                let report = check_network(&case.network, &case.input, &case.head)?;
                out.push((case, report));
            }
        }
    }
    Ok(out)
}
