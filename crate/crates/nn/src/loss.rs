//! Losses with their gradients. Batch losses are means over the batch.

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const LOG_CLAMP: f64 = 1e-12;
const PROB_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
    KlGaussian,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::CrossEntropy, LossKind::Mse, LossKind::KlGaussian];
}

fn rows<'a>(t: &'a Tensor, what: &str) -> Result<(usize, usize, &'a [f64])> {
    match t.shape() {
        [b, k] => Ok((*b, *k, t.data())),
        s => Err(NnError::Shape(format!("{what} expects [B, K], got {s:?}"))),
    }
}

/// Mean over samples of `-sum(target * ln(max(pred, 1e-12)))`, with the
/// gradient w.r.t. `pred`.
pub fn cross_entropy(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let (b, k, p) = rows(pred, "cross_entropy")?;
    if target.shape() != pred.shape() {
        return Err(NnError::Shape("cross_entropy target shape differs from prediction".into()));
    }
    for (i, row) in p.chunks(k).enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|v| !(0.0..=1.0 + PROB_TOL).contains(v)) || (s - 1.0).abs() > PROB_TOL {
            return Err(NnError::Domain(format!("row {i} is not a probability vector (sum {s})")));
        }
    }
    let t = target.data();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for i in 0..p.len() {
        if t[i] != 0.0 {
            let q = p[i].max(LOG_CLAMP);
            loss -= t[i] * q.ln();
            if p[i] >= LOG_CLAMP {
                grad[i] = -t[i] / (q * b as f64);
            }
        }
    }
    Ok((loss / b as f64, Tensor::raw(pred.shape().to_vec(), grad)))
}

/// Mean squared error over all elements, with the gradient w.r.t. `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(NnError::Shape(format!(
            "mse shapes {:?} and {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::raw(pred.shape().to_vec(), grad)))
}

/// KL divergence of N(mu, exp(logvar)) from N(0, I) for one sample.
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// Gradients of [`kl_gaussian`] w.r.t. `mu` and `logvar`.
pub fn kl_gaussian_grad(mu: &[f64], logvar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (mu.to_vec(), logvar.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect())
}

/// Batch-mean KL for a `[B, 2D]` tensor holding `mu` then `logvar`, with the
/// gradient w.r.t. that tensor.
pub fn kl_gaussian_batch(params: &Tensor) -> Result<(f64, Tensor)> {
    let (b, k, data) = rows(params, "kl_gaussian")?;
    if k % 2 != 0 {
        return Err(NnError::Shape("kl_gaussian needs an even feature count".into()));
    }
    let d = k / 2;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(data.len());
    for row in data.chunks(k) {
        let (mu, lv) = row.split_at(d);
        loss += kl_gaussian(mu, lv);
        let (gm, gl) = kl_gaussian_grad(mu, lv);
        grad.extend(gm.into_iter().chain(gl).map(|g| g / b as f64));
    }
    Ok((loss / b as f64, Tensor::raw(params.shape().to_vec(), grad)))
}

/// One-hot rows for `labels` over `classes` classes.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(NnError::Data(format!("label {l} out of range for {classes} classes")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_prediction_has_zero_cross_entropy() {
        let t = one_hot(&[1, 0], 3).unwrap();
        let (l, _) = cross_entropy(&t, &t).unwrap();
        assert!(l.abs() < 1e-9);
    }

    #[test]
    fn invalid_probabilities_are_rejected() {
        let p = Tensor::new(vec![1, 2], vec![0.7, 0.7]).unwrap();
        let t = one_hot(&[0], 2).unwrap();
        assert!(matches!(cross_entropy(&p, &t), Err(NnError::Domain(_))));
        let p = Tensor::new(vec![1, 2], vec![1.2, -0.2]).unwrap();
        assert!(matches!(cross_entropy(&p, &t), Err(NnError::Domain(_))));
    }

    #[test]
    fn confident_wrong_prediction_is_finite() {
        let p = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let (l, g) = cross_entropy(&p, &one_hot(&[1], 2).unwrap()).unwrap();
        assert!((l - (-LOG_CLAMP.ln())).abs() < 1e-9);
        assert!(g.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn kl_of_standard_normal_is_zero() {
        assert_eq!(kl_gaussian(&[0.0; 4], &[0.0; 4]), 0.0);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mu = [0.8, -0.3, 1.5];
        let var: [f64; 3] = [0.5, 2.0, 0.2];
        let lv: Vec<f64> = var.iter().map(|v| v.ln()).collect();
        let closed = kl_gaussian(&mu, &lv);
        // E_q[ln q(z) - ln p(z)] estimated from 1e6 draws of q.
        let mut r = ChaCha8Rng::seed_from_u64(17);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut s = 0.0;
            for j in 0..3 {
                let e: f64 = StandardNormal.sample(&mut r);
                let z = mu[j] + var[j].sqrt() * e;
                let lq = -0.5 * (var[j].ln() + e * e);
                let lp = -0.5 * z * z;
                s += lq - lp;
            }
            acc += s;
        }
        let mc = acc / n as f64;
        assert!((mc - closed).abs() / closed < 0.01, "mc {mc} closed {closed}");
    }

    #[test]
    fn mse_and_label_range() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(mse(&a, &b).unwrap().0, 2.5);
        assert!(one_hot(&[3], 3).is_err());
    }
}
