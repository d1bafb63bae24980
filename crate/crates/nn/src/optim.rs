use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly zero is accepted so that a run can be
    /// checked to leave parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps_adam <= 0.0 {
            return Err(NnError::Config("adam moments must lie in [0, 1) with eps > 0".into()));
        }
        Ok(())
    }
}

/// `w <- w - lr * g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(NnError::Shape(format!("{} params, {} grads", params.len(), grads.len())));
    }
    for (w, g) in params.iter_mut().zip(grads) {
        *w -= lr * g;
    }
    Ok(())
}

/// Bias-corrected Adam moments for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "adam state for {} values, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps_adam);
        }
        Ok(())
    }
}

/// Applies the configured update rule to every trainable buffer of one
/// network using the gradients of its last backward pass.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: TrainConfig,
    adam: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg: cfg.clone(),
            adam: Vec::new(),
        })
    }

    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        let slots = net.slots();
        match self.cfg.optimizer {
            OptimizerKind::Sgd => {
                for (p, g) in slots {
                    sgd_step(p, g, self.cfg.learning_rate)?;
                }
            }
            OptimizerKind::Adam => {
                if self.adam.is_empty() {
                    self.adam = slots.iter().map(|(p, _)| AdamState::new(p.len())).collect();
                }
                if self.adam.len() != slots.len() {
                    return Err(NnError::Shape("optimizer used with a different network".into()));
                }
                for ((p, g), st) in slots.into_iter().zip(&mut self.adam) {
                    st.step(p, g, &self.cfg)?;
                }
            }
        }
        Ok(())
    }
}
