//! Batch-first forward and backward kernels. Backward functions add
//! parameter gradients into the supplied buffers and return the input
//! gradient.

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn dims<const N: usize>(x: &Tensor, what: &str) -> Result<[usize; N]> {
    x.shape().try_into().map_err(|_| {
        NnError::Shape(format!("{what} expects a rank-{N} tensor, got {:?}", x.shape()))
    })
}

fn out_len(len: usize, k: usize, s: usize, what: &str) -> Result<usize> {
    if s == 0 {
        return Err(NnError::Shape(format!("{what}: stride must be >= 1")));
    }
    if len < k {
        return Err(NnError::Shape(format!("{what}: input extent {len} smaller than kernel {k}")));
    }
    Ok((len - k) / s + 1)
}

/// Valid 2-D convolution. `x` is `[B, C, H, W]`, `w` is `[F, C, KH, KW]`.
pub fn conv2d_forward(
    x: &Tensor,
    w: &[f64],
    bias: &[f64],
    filters: usize,
    kernel: (usize, usize),
    stride: usize,
) -> Result<Tensor> {
    let [b, c, h, wd] = dims::<4>(x, "conv2d")?;
    let (kh, kw) = kernel;
    if w.len() != filters * c * kh * kw || bias.len() != filters {
        return Err(NnError::Shape("conv2d weight/bias size mismatch".into()));
    }
    let ho = out_len(h, kh, stride, "conv2d")?;
    let wo = out_len(wd, kw, stride, "conv2d")?;
    let xd = x.data();
    let mut out = vec![0.0; b * filters * ho * wo];
    for n in 0..b {
        for f in 0..filters {
            let ob = (n * filters + f) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[f];
                    for ch in 0..c {
                        let xb = (n * c + ch) * h * wd;
                        let wb = (f * c + ch) * kh * kw;
                        for i in 0..kh {
                            let row = xb + (oy * stride + i) * wd + ox * stride;
                            for j in 0..kw {
                                acc += w[wb + i * kw + j] * xd[row + j];
                            }
                        }
                    }
                    out[ob + oy * wo + ox] = acc;
                }
            }
        }
    }
    Ok(Tensor::raw(vec![b, filters, ho, wo], out))
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &Tensor,
    w: &[f64],
    grad: &Tensor,
    filters: usize,
    kernel: (usize, usize),
    stride: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Result<Tensor> {
    let [b, c, h, wd] = dims::<4>(x, "conv2d")?;
    let [gb, gf, ho, wo] = dims::<4>(grad, "conv2d grad")?;
    if gb != b || gf != filters {
        return Err(NnError::Shape("conv2d gradient shape mismatch".into()));
    }
    let (kh, kw) = kernel;
    let xd = x.data();
    let g = grad.data();
    let mut dx = vec![0.0; x.len()];
    for n in 0..b {
        for f in 0..filters {
            let gbase = (n * filters + f) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let go = g[gbase + oy * wo + ox];
                    if go == 0.0 {
                        continue;
                    }
                    db[f] += go;
                    for ch in 0..c {
                        let xb = (n * c + ch) * h * wd;
                        let wb = (f * c + ch) * kh * kw;
                        for i in 0..kh {
                            let row = xb + (oy * stride + i) * wd + ox * stride;
                            for j in 0..kw {
                                dw[wb + i * kw + j] += go * xd[row + j];
                                dx[row + j] += go * w[wb + i * kw + j];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::raw(x.shape().to_vec(), dx))
}

/// Valid 1-D convolution. `x` is `[B, C, L]`, `w` is `[F, C, K]`.
pub fn conv1d_forward(
    x: &Tensor,
    w: &[f64],
    bias: &[f64],
    filters: usize,
    kernel: usize,
    stride: usize,
) -> Result<Tensor> {
    let [b, c, l] = dims::<3>(x, "conv1d")?;
    if w.len() != filters * c * kernel || bias.len() != filters {
        return Err(NnError::Shape("conv1d weight/bias size mismatch".into()));
    }
    let lo = out_len(l, kernel, stride, "conv1d")?;
    let xd = x.data();
    let mut out = vec![0.0; b * filters * lo];
    for n in 0..b {
        for f in 0..filters {
            let ob = (n * filters + f) * lo;
            for (o, slot) in out[ob..ob + lo].iter_mut().enumerate() {
                let mut acc = bias[f];
                for ch in 0..c {
                    let xb = (n * c + ch) * l + o * stride;
                    let wb = (f * c + ch) * kernel;
                    for k in 0..kernel {
                        acc += w[wb + k] * xd[xb + k];
                    }
                }
                *slot = acc;
            }
        }
    }
    Ok(Tensor::raw(vec![b, filters, lo], out))
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &Tensor,
    w: &[f64],
    grad: &Tensor,
    filters: usize,
    kernel: usize,
    stride: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Result<Tensor> {
    let [b, c, l] = dims::<3>(x, "conv1d")?;
    let [gb, gf, lo] = dims::<3>(grad, "conv1d grad")?;
    if gb != b || gf != filters {
        return Err(NnError::Shape("conv1d gradient shape mismatch".into()));
    }
    let xd = x.data();
    let g = grad.data();
    let mut dx = vec![0.0; x.len()];
    for n in 0..b {
        for f in 0..filters {
            let gbase = (n * filters + f) * lo;
            for o in 0..lo {
                let go = g[gbase + o];
                if go == 0.0 {
                    continue;
                }
                db[f] += go;
                for ch in 0..c {
                    let xb = (n * c + ch) * l + o * stride;
                    let wb = (f * c + ch) * kernel;
                    for k in 0..kernel {
                        dw[wb + k] += go * xd[xb + k];
                        dx[xb + k] += go * w[wb + k];
                    }
                }
            }
        }
    }
    Ok(Tensor::raw(x.shape().to_vec(), dx))
}

/// Transposed 1-D convolution, the adjoint of [`conv1d_forward`].
/// `x` is `[B, C, L]`, `w` is `[C, F, K]`; the output is
/// `[B, F, (L - 1) * stride + K]`.
pub fn transposed_conv1d_forward(
    x: &Tensor,
    w: &[f64],
    bias: &[f64],
    filters: usize,
    kernel: usize,
    stride: usize,
) -> Result<Tensor> {
    let [b, c, l] = dims::<3>(x, "transposed_conv1d")?;
    if stride == 0 {
        return Err(NnError::Shape("transposed_conv1d: stride must be >= 1".into()));
    }
    if w.len() != c * filters * kernel || bias.len() != filters {
        return Err(NnError::Shape("transposed_conv1d weight/bias size mismatch".into()));
    }
    if l == 0 {
        return Err(NnError::Shape("transposed_conv1d: empty input".into()));
    }
    let lo = (l - 1) * stride + kernel;
    let xd = x.data();
    let mut out = vec![0.0; b * filters * lo];
    for n in 0..b {
        for f in 0..filters {
            let ob = (n * filters + f) * lo;
            out[ob..ob + lo].iter_mut().for_each(|v| *v = bias[f]);
            for ch in 0..c {
                let xb = (n * c + ch) * l;
                let wb = (ch * filters + f) * kernel;
                for i in 0..l {
                    let xv = xd[xb + i];
                    let o = ob + i * stride;
                    for k in 0..kernel {
                        out[o + k] += xv * w[wb + k];
                    }
                }
            }
        }
    }
    Ok(Tensor::raw(vec![b, filters, lo], out))
}

#[allow(clippy::too_many_arguments)]
pub fn transposed_conv1d_backward(
    x: &Tensor,
    w: &[f64],
    grad: &Tensor,
    filters: usize,
    kernel: usize,
    stride: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Result<Tensor> {
    let [b, c, l] = dims::<3>(x, "transposed_conv1d")?;
    let [gb, gf, lo] = dims::<3>(grad, "transposed_conv1d grad")?;
    if gb != b || gf != filters || lo != (l - 1) * stride + kernel {
        return Err(NnError::Shape("transposed_conv1d gradient shape mismatch".into()));
    }
    let xd = x.data();
    let g = grad.data();
    let mut dx = vec![0.0; x.len()];
    for n in 0..b {
        for f in 0..filters {
            let gbase = (n * filters + f) * lo;
            db[f] += g[gbase..gbase + lo].iter().sum::<f64>();
            for ch in 0..c {
                let xb = (n * c + ch) * l;
                let wb = (ch * filters + f) * kernel;
                for i in 0..l {
                    let o = gbase + i * stride;
                    let mut acc = 0.0;
                    for k in 0..kernel {
                        acc += g[o + k] * w[wb + k];
                        dw[wb + k] += g[o + k] * xd[xb + i];
                    }
                    dx[xb + i] += acc;
                }
            }
        }
    }
    Ok(Tensor::raw(x.shape().to_vec(), dx))
}

fn channel_layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(NnError::Shape(format!("batchnorm needs [B, C, ...], got {s:?}")));
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

/// Batch statistics of a training-mode batchnorm pass.
#[derive(Debug, Clone)]
pub struct BnBatch {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Per-channel normalization over batch and spatial axes.
pub fn batchnorm_train_forward(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<(Tensor, BnBatch)> {
    let (b, c, sp) = channel_layout(x)?;
    if b < 2 {
        return Err(NnError::Statistics(b));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(NnError::Shape("batchnorm parameter size mismatch".into()));
    }
    let xd = x.data();
    let count = b * sp;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * sp;
            mean[ch] += xd[base..base + sp].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * sp;
            var[ch] += xd[base..base + sp].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * sp;
            for i in base..base + sp {
                xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                out[i] = gamma[ch] * xhat[i] + beta[ch];
            }
        }
    }
    Ok((
        Tensor::raw(x.shape().to_vec(), out),
        BnBatch {
            xhat,
            inv_std,
            mean,
            var,
            count,
        },
    ))
}

/// Inference-mode batchnorm with running statistics.
pub fn batchnorm_infer(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Tensor> {
    let (b, c, sp) = channel_layout(x)?;
    if gamma.len() != c || running_mean.len() != c {
        return Err(NnError::Shape("batchnorm parameter size mismatch".into()));
    }
    let mut out = x.data().to_vec();
    for n in 0..b {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
            let shift = beta[ch] - running_mean[ch] * scale;
            let base = (n * c + ch) * sp;
            out[base..base + sp].iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    Ok(Tensor::raw(x.shape().to_vec(), out))
}

pub fn batchnorm_backward(
    grad: &Tensor,
    batch: &BnBatch,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Result<Tensor> {
    let (b, c, sp) = channel_layout(grad)?;
    let g = grad.data();
    let m = batch.count as f64;
    let mut sum_dxhat = vec![0.0; c];
    let mut sum_dxhat_xhat = vec![0.0; c];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * sp;
            for i in base..base + sp {
                dgamma[ch] += g[i] * batch.xhat[i];
                dbeta[ch] += g[i];
                let dxh = g[i] * gamma[ch];
                sum_dxhat[ch] += dxh;
                sum_dxhat_xhat[ch] += dxh * batch.xhat[i];
            }
        }
    }
    let mut dx = vec![0.0; g.len()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * sp;
            for i in base..base + sp {
                let dxh = g[i] * gamma[ch];
                dx[i] = batch.inv_std[ch] / m
                    * (m * dxh - sum_dxhat[ch] - batch.xhat[i] * sum_dxhat_xhat[ch]);
            }
        }
    }
    Ok(Tensor::raw(grad.shape().to_vec(), dx))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor::raw(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect())
}

pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    Tensor::raw(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(grad.data())
            .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
            .collect(),
    )
}

/// 2x2 max pooling with stride 2; trailing odd rows and columns are
/// dropped. Returns the output and the flat input index of each maximum.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [b, c, h, w] = dims::<4>(x, "maxpool2x2")?;
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(NnError::Shape(format!("maxpool2x2 on {h}x{w} input")));
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut arg = Vec::with_capacity(out.capacity());
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::raw(vec![b, c, ho, wo], out), arg))
}

pub fn maxpool2x2_backward(input_shape: &[usize], argmax: &[usize], grad: &Tensor) -> Tensor {
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (g, &i) in grad.data().iter().zip(argmax) {
        dx[i] += g;
    }
    Tensor::raw(input_shape.to_vec(), dx)
}

/// `x` is `[B, in]`, `w` is `[out, in]`.
pub fn dense_forward(x: &Tensor, w: &[f64], bias: &[f64], outputs: usize) -> Result<Tensor> {
    let [b, inputs] = dims::<2>(x, "dense")?;
    if w.len() != outputs * inputs || bias.len() != outputs {
        return Err(NnError::Shape(format!(
            "dense {inputs}->{outputs} weight/bias size mismatch"
        )));
    }
    let xd = x.data();
    let mut out = vec![0.0; b * outputs];
    for n in 0..b {
        let xr = &xd[n * inputs..(n + 1) * inputs];
        for o in 0..outputs {
            let wr = &w[o * inputs..(o + 1) * inputs];
            out[n * outputs + o] = bias[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(Tensor::raw(vec![b, outputs], out))
}

pub fn dense_backward(
    x: &Tensor,
    w: &[f64],
    grad: &Tensor,
    outputs: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Result<Tensor> {
    let [b, inputs] = dims::<2>(x, "dense")?;
    let [gb, go] = dims::<2>(grad, "dense grad")?;
    if gb != b || go != outputs {
        return Err(NnError::Shape("dense gradient shape mismatch".into()));
    }
    let xd = x.data();
    let g = grad.data();
    let mut dx = vec![0.0; x.len()];
    for n in 0..b {
        let xr = &xd[n * inputs..(n + 1) * inputs];
        let dxr = &mut dx[n * inputs..(n + 1) * inputs];
        for o in 0..outputs {
            let gv = g[n * outputs + o];
            if gv == 0.0 {
                continue;
            }
            db[o] += gv;
            let wr = &w[o * inputs..(o + 1) * inputs];
            let dwr = &mut dw[o * inputs..(o + 1) * inputs];
            for i in 0..inputs {
                dwr[i] += gv * xr[i];
                dxr[i] += gv * wr[i];
            }
        }
    }
    Ok(Tensor::raw(x.shape().to_vec(), dx))
}

/// Softmax over the last axis, with the row maximum subtracted first.
pub fn softmax_forward(x: &Tensor) -> Result<Tensor> {
    let k = *x
        .shape()
        .last()
        .ok_or_else(|| NnError::Shape("softmax on a scalar".into()))?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(Tensor::raw(x.shape().to_vec(), out))
}

/// Given the softmax output `y`, `dx = y * (g - sum(g * y))` per row.
pub fn softmax_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let k = *y.shape().last().unwrap_or(&1);
    let mut dx = vec![0.0; y.len()];
    for ((yr, gr), dr) in y
        .data()
        .chunks(k)
        .zip(grad.data().chunks(k))
        .zip(dx.chunks_mut(k))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for i in 0..k {
            dr[i] = yr[i] * (gr[i] - dot);
        }
    }
    Tensor::raw(y.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv2d_examples() {
        let x = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d_forward(&x, &[1.0; 4], &[0.0], 1, (2, 2), 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));

        let x = Tensor::new(vec![1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let y = conv2d_forward(&x, &[1.0], &[0.0], 1, (1, 1), 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let x = rand_vec(&mut r, 48);
        let w = rand_vec(&mut r, 16);
        let b = rand_vec(&mut r, 4);
        let t = Tensor::new(vec![1, 1, 8, 6], x.clone()).unwrap();
        let y = conv2d_forward(&t, &w, &b, 4, (2, 2), 1).unwrap();
        for f in 0..4 {
            for i in 0..7 {
                for j in 0..5 {
                    let mut o = b[f];
                    for p in 0..2 {
                        for q in 0..2 {
                            o += w[f * 4 + p * 2 + q] * x[(i + p) * 6 + j + q];
                        }
                    }
                    assert!((y.data()[(f * 7 + i) * 5 + j] - o).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv1d_examples() {
        let x = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = conv1d_forward(&x, &[1.0, 1.0], &[0.0], 1, 2, 1).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
        let one = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let y = transposed_conv1d_forward(&one, &[1.0, 2.0, 3.0], &[0.0], 1, 3, 1).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn adjoint_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for case in 0..50 {
            let (c, f) = (1 + case % 3, 1 + case % 4);
            let k = 1 + case % 5;
            let s = 1 + case % 3;
            let lo = 3 + case % 7;
            let l = (lo - 1) * s + k;
            let w = rand_vec(&mut r, f * c * k);
            let x = Tensor::new(vec![2, c, l], rand_vec(&mut r, 2 * c * l)).unwrap();
            let y = Tensor::new(vec![2, f, lo], rand_vec(&mut r, 2 * f * lo)).unwrap();
            let cx = conv1d_forward(&x, &w, &vec![0.0; f], f, k, s).unwrap();
            // The transposed layer maps f channels back to c with the same
            // array read as [f, c, k].
            let ty = transposed_conv1d_forward(&y, &w, &vec![0.0; c], c, k, s).unwrap();
            assert_eq!(ty.shape(), x.shape());
            assert!((cx.dot(&y) - x.dot(&ty)).abs() < 1e-10);
        }
    }

    #[test]
    fn batchnorm_standardizes() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let raw = rand_vec(&mut r, 200);
        let m = raw.iter().sum::<f64>() / 200.0;
        let sd = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 200.0).sqrt();
        // Rescale to mean 5, variance 4.
        let data: Vec<f64> = raw.iter().map(|v| 5.0 + 2.0 * (v - m) / sd).collect();
        let x = Tensor::new(vec![200, 1], data.clone()).unwrap();
        let (y, stats) = batchnorm_train_forward(&x, &[1.0], &[0.0]).unwrap();
        let ym = y.data().iter().sum::<f64>() / 200.0;
        let yv = y.data().iter().map(|v| (v - ym).powi(2)).sum::<f64>() / 200.0;
        // Epsilon shrinks the variance to 4 / (4 + eps), 2.5e-6 below one.
        assert!(ym.abs() < 1e-6 && (yv - 4.0 / (4.0 + BN_EPS)).abs() < 1e-9);
        assert!((yv - 1.0).abs() < 1e-5);
        assert!((stats.mean[0] - 5.0).abs() < 1e-12 && (stats.var[0] - 4.0).abs() < 1e-9);

        let (y2, _) = batchnorm_train_forward(&x, &[2.0], &[3.0]).unwrap();
        let m2 = y2.data().iter().sum::<f64>() / 200.0;
        let s2 = (y2.data().iter().map(|v| (v - m2).powi(2)).sum::<f64>() / 200.0).sqrt();
        assert!((m2 - 3.0).abs() < 1e-6 && (s2 - 2.0).abs() < 1e-5);

        // Direct oracle.
        for (i, v) in data.iter().enumerate() {
            let o = 2.0 * (v - 5.0) / (stats.var[0] + BN_EPS).sqrt() + 3.0;
            assert!((y2.data()[i] - o).abs() < 1e-10);
        }
        let single = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert!(matches!(batchnorm_train_forward(&single, &[1.0], &[0.0]), Err(NnError::Statistics(1))));
    }

    #[test]
    fn pooling_and_softmax() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2x2_forward(&x).unwrap().0.data(), &[4.0]);
        let x = Tensor::new(vec![1, 1, 7, 5], (0..35).map(f64::from).collect()).unwrap();
        assert_eq!(maxpool2x2_forward(&x).unwrap().0.shape(), &[1, 1, 3, 2]);

        let s = softmax_forward(&Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let a = softmax_forward(&Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap()).unwrap();
        let b = softmax_forward(&Tensor::new(vec![1, 3], vec![100.3, 98.8, 102.0]).unwrap()).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
