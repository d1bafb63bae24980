use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::loss::{cross_entropy, one_hot};
use crate::network::{LayerSpec, Network};
use crate::optim::{Optimizer, TrainConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Splits `0..n` into shuffled mini-batches. A trailing batch of one sample
/// is folded into its predecessor so batchnorm always sees two samples.
pub fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

/// Trains a softmax classifier with cross-entropy loss.
pub fn train_classifier(
    net: &mut Network,
    inputs: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if inputs.is_empty() {
        return Err(NnError::Data("empty training set".into()));
    }
    if inputs.len() != labels.len() {
        return Err(NnError::Data(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if !matches!(net.layers().last(), Some(LayerSpec::Softmax)) {
        return Err(NnError::Config("classifier must end in softmax".into()));
    }
    let classes = net.output_shape()[0];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::Data(format!("label {bad} out of range for {classes} classes")));
    }
    if net.has_batchnorm() && inputs.len() < 2 {
        return Err(NnError::Statistics(inputs.len()));
    }
    let mut opt = Optimizer::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sample_shape = net.input_shape().to_vec();
    let mut history = TrainHistory::default();
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in batches(inputs.len(), cfg.batch_size, &mut rng) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let x = Tensor::stack(&xs, &sample_shape)?;
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let t = one_hot(&ys, classes)?;
            let p = net.forward_train(&x)?;
            let (loss, g) = cross_entropy(&p, &t)?;
            net.backward(&g)?;
            opt.step(net)?;
            total += loss * batch.len() as f64;
        }
        history.epoch_loss.push(total / inputs.len() as f64);
    }
    Ok(history)
}

/// Class index of the largest output of each row.
pub fn predict(net: &Network, inputs: &[Vec<f64>]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(256) {
        let xs: Vec<&[f64]> = chunk.iter().map(|v| v.as_slice()).collect();
        let y = net.infer(&Tensor::stack(&xs, net.input_shape())?)?;
        for b in 0..y.batch() {
            out.push(argmax(y.sample(b)));
        }
    }
    Ok(out)
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
