//! Convolutional variational autoencoder for per-appliance disaggregation of
//! 1/6 Hz aggregate power.

use std::collections::BTreeMap;

use gridwatch_core::simgen::{self, gen_activation, gen_activation_series, gen_aggregate, ApplianceProfile, DisaggWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::loss::{kl_gaussian, mse};
use crate::model_file::ModelFile;
use crate::network::{LayerSpec, Network};
use crate::optim::{Optimizer, TrainConfig};
use crate::tensor::Tensor;
use crate::train::batches;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
pub const SUPPORTED_WINDOWS: [usize; 3] = [64, 128, 256];
pub const DEFAULT_WINDOW: usize = 128;
/// Floor on the per-window aggregate standard deviation, in watts.
pub const NORM_STD_FLOOR_W: f64 = 10.0;
pub const CVAE_MODEL_KIND: &str = "cvae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvaeConfig {
    pub window: usize,
    pub latent_dim: usize,
    /// KL weight.
    pub lambda: f64,
    pub encoder_filters: (usize, usize),
    pub encoder_kernels: (usize, usize),
    /// Stride of both transposed convolutions.
    pub decoder_stride: usize,
    /// Epochs over which the KL weight ramps linearly from 0 to `lambda`;
    /// 0 keeps it constant.
    pub kl_warmup_epochs: usize,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        CvaeConfig {
            window: DEFAULT_WINDOW,
            latent_dim: 16,
            lambda: 0.1,
            encoder_filters: (10, 20),
            encoder_kernels: (6, 4),
            decoder_stride: 2,
            kl_warmup_epochs: 0,
        }
    }
}

/// Decoder seed length `L1` with `((L1 - 1) * s + K1 - 1) * s + K2 = T`.
fn decoder_seed_len(t: usize, s: usize) -> Result<usize> {
    let (k1, k2) = DEC_KERNELS;
    let err = || {
        NnError::Config(format!(
            "window {t} not reachable by the decoder with stride {s}; supported windows include {SUPPORTED_WINDOWS:?}"
        ))
    };
    if s == 0 || t < k2 + s * (k1 - 1) || (t - k2) % s != 0 {
        return Err(err());
    }
    let l2 = (t - k2) / s + 1;
    if l2 < k1 || (l2 - k1) % s != 0 {
        return Err(err());
    }
    Ok((l2 - k1) / s + 1)
}

const DEC_CHANNELS: (usize, usize) = (20, 10);
const DEC_KERNELS: (usize, usize) = (4, 6);

#[derive(Debug, Clone, PartialEq)]
pub struct LatentParams {
    pub mu: Vec<f64>,
    /// Clamped log-variance.
    pub logvar: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvaeLoss {
    pub total: f64,
    pub estimation: f64,
    pub variational: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisaggScore {
    pub mae_w: f64,
    /// `None` when the ground truth holds no energy.
    pub sae: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Cvae {
    pub config: CvaeConfig,
    pub appliance_id: String,
    pub encoder: Network,
    pub decoder: Network,
    pub trained: bool,
}

impl Cvae {
    pub fn new(appliance_id: &str, config: CvaeConfig, seed: u64) -> Result<Self> {
        let t = config.window;
        let l1 = decoder_seed_len(t, config.decoder_stride)?;
        let (f1, f2) = config.encoder_filters;
        let (k1, k2) = config.encoder_kernels;
        let d = config.latent_dim;
        if d == 0 || f1 == 0 || f2 == 0 || !(config.lambda >= 0.0) {
            return Err(NnError::Config("latent size and filter counts must be >= 1, lambda >= 0".into()));
        }
        if t < k1 + k2 {
            return Err(NnError::Config(format!("window {t} shorter than the encoder receptive field")));
        }
        let enc_len = t - k1 + 1 - k2 + 1;
        let encoder = Network::build(
            &[1, t],
            vec![
                LayerSpec::Conv1d {
                    filters: f1,
                    channels: 1,
                    kernel: k1,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Conv1d {
                    filters: f2,
                    channels: f1,
                    kernel: k2,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                // mu and logvar heads side by side.
                LayerSpec::Dense {
                    inputs: f2 * enc_len,
                    outputs: 2 * d,
                },
            ],
            simgen::subseed(seed, 1),
        )?;
        let (c1, c2) = DEC_CHANNELS;
        let (dk1, dk2) = DEC_KERNELS;
        let decoder = Network::build(
            &[d],
            vec![
                LayerSpec::Dense {
                    inputs: d,
                    outputs: c1 * l1,
                },
                LayerSpec::Relu,
                LayerSpec::Reshape { shape: vec![c1, l1] },
                LayerSpec::TransposedConv1d {
                    filters: c2,
                    channels: c1,
                    kernel: dk1,
                    stride: config.decoder_stride,
                },
                LayerSpec::TransposedConv1d {
                    filters: 1,
                    channels: c2,
                    kernel: dk2,
                    stride: config.decoder_stride,
                },
            ],
            simgen::subseed(seed, 2),
        )?;
        debug_assert_eq!(decoder.output_shape(), [1, t]);
        Ok(Cvae {
            config,
            appliance_id: appliance_id.to_string(),
            encoder,
            decoder,
            trained: false,
        })
    }

    pub fn window(&self) -> usize {
        self.config.window
    }

    fn check_rows(&self, rows: &[&[f64]]) -> Result<()> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.window()) {
            return Err(NnError::Shape(format!(
                "window of {} samples, model expects {}",
                r.len(),
                self.window()
            )));
        }
        Ok(())
    }

    fn split_heads(&self, out: &Tensor) -> Vec<LatentParams> {
        let d = self.config.latent_dim;
        (0..out.batch())
            .map(|b| {
                let row = out.sample(b);
                LatentParams {
                    mu: row[..d].to_vec(),
                    logvar: row[d..].iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect(),
                }
            })
            .collect()
    }

    /// Encoder heads for normalized windows.
    pub fn encode(&self, x: &[&[f64]]) -> Result<Vec<LatentParams>> {
        self.check_rows(x)?;
        let out = self.encoder.infer(&Tensor::stack(x, &[1, self.window()])?)?;
        Ok(self.split_heads(&out))
    }

    /// Decoder means for latent codes; one row of length `T` per code.
    pub fn decode(&self, z: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let out = self.decoder.infer(&Tensor::stack(z, &[self.config.latent_dim])?)?;
        Ok((0..out.batch()).map(|b| out.sample(b).to_vec()).collect())
    }

    /// Loss on normalized `(x, y)` rows for given standard-normal draws
    /// `eps`, leaving gradients in both networks.
    pub fn loss_and_grads(&mut self, x: &[&[f64]], y: &[&[f64]], eps: &[Vec<f64>], lambda: f64) -> Result<CvaeLoss> {
        self.check_rows(x)?;
        self.check_rows(y)?;
        let b = x.len();
        let d = self.config.latent_dim;
        if y.len() != b || eps.len() != b || eps.iter().any(|e| e.len() != d) {
            return Err(NnError::Shape("x, y and eps batches must align".into()));
        }
        let t = self.window();
        let heads = self.encoder.forward_train(&Tensor::stack(x, &[1, t])?)?;
        let mut z = Vec::with_capacity(b * d);
        let mut kl = 0.0;
        for s in 0..b {
            let row = heads.sample(s);
            let lv: Vec<f64> = row[d..].iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
            kl += kl_gaussian(&row[..d], &lv);
            for j in 0..d {
                z.push(row[j] + (0.5 * lv[j]).exp() * eps[s][j]);
            }
        }
        kl /= b as f64;
        let yhat = self.decoder.forward_train(&Tensor::new(vec![b, d], z)?)?;
        let (est, gy) = mse(&yhat, &Tensor::stack(y, &[1, t])?)?;
        let dz = self.decoder.backward(&gy)?;
        let mut gh = vec![0.0; b * 2 * d];
        for s in 0..b {
            let row = heads.sample(s);
            for j in 0..d {
                let mu = row[j];
                let raw = row[d + j];
                let lv = raw.clamp(LOGVAR_MIN, LOGVAR_MAX);
                let sd = (0.5 * lv).exp();
                let g = dz.data()[s * d + j];
                gh[s * 2 * d + j] = g + lambda * mu / b as f64;
                let dlv = g * eps[s][j] * 0.5 * sd + lambda * 0.5 * (lv.exp() - 1.0) / b as f64;
                gh[s * 2 * d + d + j] = if (LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) { dlv } else { 0.0 };
            }
        }
        self.encoder.backward(&Tensor::new(vec![b, 2 * d], gh)?)?;
        Ok(CvaeLoss {
            total: est + lambda * kl,
            estimation: est,
            variational: kl,
        })
    }

    /// Maps a raw aggregate window to the appliance estimate in watts.
    pub fn disaggregate(&self, aggregate: &[f64]) -> Result<Vec<f64>> {
        Ok(self.disaggregate_batch(&[aggregate])?.remove(0))
    }

    pub fn disaggregate_batch(&self, aggregates: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            log::warn!("disaggregating with an untrained {} model", self.appliance_id);
        }
        let mut out = Vec::with_capacity(aggregates.len());
        for chunk in aggregates.chunks(256) {
            let norm: Vec<(Vec<f64>, (f64, f64))> = chunk
                .iter()
                .map(|a| {
                    let (m, s) = window_stats(a);
                    (normalize(a, m, s), (m, s))
                })
                .collect();
            let rows: Vec<&[f64]> = norm.iter().map(|(x, _)| x.as_slice()).collect();
            let heads = self.encode(&rows)?;
            let mus: Vec<&[f64]> = heads.iter().map(|h| h.mu.as_slice()).collect();
            let dec = self.decode(&mus)?;
            for (yn, (_, (_, s))) in dec.into_iter().zip(&norm) {
                out.push(yn.into_iter().map(|v| (v * s).max(0.0)).collect());
            }
        }
        Ok(out)
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        let mut m = ModelFile::new(CVAE_MODEL_KIND);
        m.networks.insert("encoder".into(), self.encoder.clone());
        m.networks.insert("decoder".into(), self.decoder.clone());
        m.meta.insert("config".into(), serde_json::to_value(&self.config)?);
        m.meta.insert("appliance_id".into(), serde_json::json!(self.appliance_id));
        m.meta.insert("trained".into(), serde_json::json!(self.trained));
        m.meta.insert("norm_std_floor_w".into(), serde_json::json!(NORM_STD_FLOOR_W));
        Ok(m)
    }

    pub fn from_model_file(m: &ModelFile) -> Result<Self> {
        m.expect_kind(CVAE_MODEL_KIND)?;
        let config: CvaeConfig = m.meta_field("config")?;
        let appliance_id: String = m.meta_field("appliance_id")?;
        let mut c = Cvae::new(&appliance_id, config, 0)?;
        let enc = m.network("encoder")?;
        let dec = m.network("decoder")?;
        if enc.layers() != c.encoder.layers() || dec.layers() != c.decoder.layers() {
            return Err(NnError::Format("CVAE networks do not match the stored config".into()));
        }
        c.encoder = enc.clone();
        c.decoder = dec.clone();
        c.trained = m.meta_field("trained")?;
        Ok(c)
    }
}

/// Mean and floored standard deviation of a window.
pub fn window_stats(x: &[f64]) -> (f64, f64) {
    let n = x.len().max(1) as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
    (m, v.sqrt().max(NORM_STD_FLOOR_W))
}

pub fn normalize(x: &[f64], mean: f64, std: f64) -> Vec<f64> {
    x.iter().map(|v| (v - mean) / std).collect()
}

pub fn denormalize(x: &[f64], mean: f64, std: f64) -> Vec<f64> {
    x.iter().map(|v| v * std + mean).collect()
}

/// Normalized aggregate and target; the target is scaled by the aggregate
/// standard deviation but not shifted, so zero stays zero.
pub fn normalize_window(w: &DisaggWindow) -> (Vec<f64>, Vec<f64>, (f64, f64)) {
    let (m, s) = window_stats(&w.aggregate);
    let x = normalize(&w.aggregate, m, s);
    let y = w.target.iter().map(|v| v / s).collect();
    (x, y, (m, s))
}

/// `z = mu + exp(logvar / 2) * eps` with `eps` drawn from `seed`.
pub fn reparameterize(p: &LatentParams, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    p.mu.iter()
        .zip(&p.logvar)
        .map(|(m, lv)| {
            let e: f64 = StandardNormal.sample(&mut r);
            m + (0.5 * lv).exp() * e
        })
        .collect()
}

fn draw_eps(r: &mut ChaCha8Rng, b: usize, d: usize) -> Vec<Vec<f64>> {
    (0..b).map(|_| (0..d).map(|_| StandardNormal.sample(r)).collect()).collect()
}

/// Loss of one normalized window pair with `eps` drawn from `seed`.
pub fn cvae_loss(model: &Cvae, x: &[f64], y: &[f64], lambda: f64, seed: u64) -> Result<CvaeLoss> {
    let mut m = model.clone();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let eps = draw_eps(&mut r, 1, model.config.latent_dim);
    let l = m.loss_and_grads(&[x], &[y], &eps, lambda)?;
    Ok(l)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisaggHistory {
    pub epoch_loss: Vec<CvaeLoss>,
}

/// Trains one appliance model with Adam on normalized windows.
pub fn train_disagg(model: &mut Cvae, windows: &[DisaggWindow], cfg: &TrainConfig) -> Result<DisaggHistory> {
    if windows.is_empty() {
        return Err(NnError::Data("no training windows".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.appliance_id != model.appliance_id) {
        return Err(NnError::Data(format!(
            "window for `{}` in a `{}` training set",
            w.appliance_id, model.appliance_id
        )));
    }
    let prepared: Vec<(Vec<f64>, Vec<f64>)> = windows
        .iter()
        .map(|w| {
            let (x, y, _) = normalize_window(w);
            (x, y)
        })
        .collect();
    let mut enc_opt = Optimizer::new(cfg)?;
    let mut dec_opt = Optimizer::new(cfg)?;
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = model.config.latent_dim;
    let mut history = DisaggHistory::default();
    for epoch in 0..cfg.epochs {
        let lambda = match model.config.kl_warmup_epochs {
            0 => model.config.lambda,
            n => model.config.lambda * ((epoch + 1) as f64 / n as f64).min(1.0),
        };
        let mut acc = CvaeLoss {
            total: 0.0,
            estimation: 0.0,
            variational: 0.0,
        };
        for batch in batches(prepared.len(), cfg.batch_size, &mut r) {
            let x: Vec<&[f64]> = batch.iter().map(|&i| prepared[i].0.as_slice()).collect();
            let y: Vec<&[f64]> = batch.iter().map(|&i| prepared[i].1.as_slice()).collect();
            let eps = draw_eps(&mut r, batch.len(), d);
            let l = model.loss_and_grads(&x, &y, &eps, lambda)?;
            enc_opt.step(&mut model.encoder)?;
            dec_opt.step(&mut model.decoder)?;
            let w = batch.len() as f64 / prepared.len() as f64;
            acc.total += l.total * w;
            acc.estimation += l.estimation * w;
            acc.variational += l.variational * w;
        }
        log::debug!("disagg epoch {epoch}: {acc:?}");
        history.epoch_loss.push(acc);
    }
    model.trained = true;
    Ok(history)
}

fn check_aligned(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(NnError::Shape(format!(
            "series of {} and {} samples",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

/// Mean absolute error in watts.
pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_aligned(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// `|E - E_hat| / E` with `E = sum(y)`.
pub fn sae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_aligned(y, yhat)?;
    let e: f64 = y.iter().sum();
    if e <= 0.0 {
        return Err(NnError::Undefined("signal aggregate error with zero true energy".into()));
    }
    Ok((e - yhat.iter().sum::<f64>()).abs() / e)
}

/// Scores over the concatenation of all windows.
pub fn score(truth: &[Vec<f64>], estimate: &[Vec<f64>]) -> Result<DisaggScore> {
    let y: Vec<f64> = truth.concat();
    let yh: Vec<f64> = estimate.concat();
    Ok(DisaggScore {
        mae_w: mae(&y, &yh)?,
        sae: sae(&y, &yh).ok(),
    })
}

/// Intersection over union of the samples above `threshold_w`.
pub fn on_interval_iou(truth: &[f64], estimate: &[f64], threshold_w: f64) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, b) in truth.iter().zip(estimate) {
        let (p, q) = (*a > threshold_w, *b > threshold_w);
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Dispatches windows to per-appliance models.
#[derive(Debug, Clone, Default)]
pub struct DisaggRouter {
    models: BTreeMap<String, Cvae>,
}

impl DisaggRouter {
    pub fn insert(&mut self, model: Cvae) {
        self.models.insert(model.appliance_id.clone(), model);
    }

    pub fn appliances(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn route(&self, appliance_id: &str, aggregate: &[f64]) -> Result<Vec<f64>> {
        self.models
            .get(appliance_id)
            .ok_or_else(|| NnError::Data(format!("no model for appliance `{appliance_id}`")))?
            .disaggregate(aggregate)
    }
}

/// Synthetic corpus settings for one target appliance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisaggCorpusConfig {
    pub window: usize,
    pub noise_sigma_w: f64,
    /// Fraction of windows that contain the target.
    pub target_fraction: f64,
    /// Other appliances with the probability that each appears in a window.
    pub distractors: Vec<(String, f64)>,
}

impl Default for DisaggCorpusConfig {
    fn default() -> Self {
        DisaggCorpusConfig {
            window: DEFAULT_WINDOW,
            noise_sigma_w: 5.0,
            target_fraction: 0.5,
            distractors: vec![
                ("fridge".into(), 1.0),
                ("microwave".into(), 0.5),
                ("washing_machine".into(), 0.25),
            ],
        }
    }
}

fn profile(id: &str) -> Result<ApplianceProfile> {
    ApplianceProfile::builtin(id).ok_or_else(|| NnError::Data(format!("unknown appliance `{id}`")))
}

/// `n` windows for `target`; window `i` contains the target when
/// `i` falls in the configured fraction of a seeded shuffle. Activations
/// longer than the window are cropped to a random stretch of it.
pub fn gen_disagg_corpus(target: &str, n: usize, cfg: &DisaggCorpusConfig, seed: u64) -> Result<Vec<DisaggWindow>> {
    let t = cfg.window;
    let target_profile = profile(target)?;
    let mut with_target: Vec<bool> = (0..n).map(|i| (i as f64) < cfg.target_fraction * n as f64).collect();
    let mut r = ChaCha8Rng::seed_from_u64(simgen::subseed(seed, 0));
    for k in (1..n).rev() {
        let j = r.random_range(0..=k);
        with_target.swap(k, j);
    }
    let crop = |mut a: Vec<f64>, r: &mut ChaCha8Rng| -> Vec<f64> {
        if a.len() > t {
            let start = r.random_range(0..=a.len() - t);
            let len = r.random_range(t / 4..=t);
            a = a[start..start + len].to_vec();
        }
        a
    };
    let mut out = Vec::with_capacity(n);
    for (i, &include) in with_target.iter().enumerate() {
        let ws = simgen::subseed(seed, 1 + i as u64);
        let mut r = ChaCha8Rng::seed_from_u64(ws);
        let mut acts = Vec::new();
        let a = gen_activation(&target_profile, simgen::subseed(ws, 1))?;
        acts.push((target.to_string(), crop(a, &mut r)));
        for (k, (id, p)) in cfg.distractors.iter().enumerate() {
            if id == target || !r.random_bool(p.clamp(0.0, 1.0)) {
                continue;
            }
            let prof = profile(id)?;
            let s = simgen::subseed(ws, 10 + k as u64);
            let a = if prof.periodic {
                gen_activation_series(&prof, t, s)?
            } else {
                crop(gen_activation(&prof, s)?, &mut r)
            };
            acts.push((id.clone(), a));
        }
        out.push(gen_aggregate(&acts, t, target, include, cfg.noise_sigma_w, simgen::subseed(ws, 2))?);
    }
    Ok(out)
}

/// Usage rates for a continuous synthetic household series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HouseholdConfig {
    pub days: f64,
    pub noise_sigma_w: f64,
    /// Activations per day for each one-shot appliance; periodic
    /// appliances run throughout.
    pub uses_per_day: Vec<(String, f64)>,
}

impl Default for HouseholdConfig {
    fn default() -> Self {
        HouseholdConfig {
            days: 1.0,
            noise_sigma_w: 5.0,
            uses_per_day: vec![
                ("kettle".into(), 6.0),
                ("fridge".into(), 0.0),
                ("microwave".into(), 3.0),
                ("washing_machine".into(), 0.5),
            ],
        }
    }
}

/// Continuous 1/6 Hz series with its per-appliance ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdSeries {
    pub aggregate: Vec<f64>,
    pub appliances: BTreeMap<String, Vec<f64>>,
}

pub const SAMPLES_PER_DAY: usize = 14_400;

/// Places activations at uniformly random start times (the count per
/// appliance is the rounded daily rate times the day count) and adds the
/// same clipped noise floor as the window generator.
pub fn gen_household(cfg: &HouseholdConfig, seed: u64) -> Result<HouseholdSeries> {
    let len = (cfg.days * SAMPLES_PER_DAY as f64).round() as usize;
    if len == 0 {
        return Err(NnError::Config("household series needs a positive length".into()));
    }
    let mut r = ChaCha8Rng::seed_from_u64(simgen::subseed(seed, 0));
    let mut appliances = BTreeMap::new();
    for (k, (id, rate)) in cfg.uses_per_day.iter().enumerate() {
        let prof = profile(id)?;
        let s = simgen::subseed(seed, 1 + k as u64);
        let mut own = vec![0.0; len];
        if prof.periodic {
            own = gen_activation_series(&prof, len, s)?;
        } else {
            let n = (rate * cfg.days).round() as usize;
            for j in 0..n {
                let a = gen_activation(&prof, simgen::subseed(s, j as u64))?;
                let start = r.random_range(0..len.saturating_sub(a.len()).max(1));
                for (o, p) in own[start..].iter_mut().zip(&a) {
                    *o += p;
                }
            }
        }
        appliances.insert(id.clone(), own);
    }
    let mut nr = ChaCha8Rng::seed_from_u64(simgen::subseed(seed, u64::MAX));
    let aggregate = (0..len)
        .map(|i| {
            let g: f64 = StandardNormal.sample(&mut nr);
            let noise = cfg.noise_sigma_w * (3.0 + g.clamp(-3.0, 3.0));
            noise + appliances.values().map(|a| a[i]).sum::<f64>()
        })
        .collect();
    Ok(HouseholdSeries { aggregate, appliances })
}

/// Disaggregates a long series in consecutive non-overlapping windows; a
/// trailing partial window is estimated from the last full window.
pub fn disaggregate_series(model: &Cvae, aggregate: &[f64]) -> Result<Vec<f64>> {
    let t = model.window();
    if aggregate.len() < t {
        return Err(NnError::Shape(format!("series of {} samples shorter than one window", aggregate.len())));
    }
    let mut starts: Vec<usize> = (0..aggregate.len() / t).map(|k| k * t).collect();
    if aggregate.len() % t != 0 {
        starts.push(aggregate.len() - t);
    }
    let windows: Vec<&[f64]> = starts.iter().map(|&s| &aggregate[s..s + t]).collect();
    let est = model.disaggregate_batch(&windows)?;
    let mut out = vec![0.0; aggregate.len()];
    for (&s, e) in starts.iter().zip(est) {
        out[s..s + t].copy_from_slice(&e);
    }
    Ok(out)
}

pub const SAMPLE_PERIOD_S: f64 = 6.0;
/// Readings further apart than this leave the samples between them marked
/// as gaps instead of being forward-filled.
pub const DEFAULT_MAX_GAP_S: f64 = 180.0;

/// A low-rate power series resampled onto a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSeries {
    pub start_s: f64,
    pub period_s: f64,
    pub watts: Vec<f64>,
    /// True where no reading lies within the gap tolerance; those samples
    /// hold 0 W.
    pub gap: Vec<bool>,
}

/// Parses `seconds watts` lines (whitespace or comma separated, `#`
/// comments and blank lines ignored) and resamples them onto a
/// `period_s` grid starting at the first timestamp. Each grid point takes
/// the latest reading at or before it when that reading is at most
/// `max_gap_s` old.
pub fn parse_power_series(text: &str, period_s: f64, max_gap_s: f64) -> Result<PowerSeries> {
    if !(period_s > 0.0) || !(max_gap_s >= 0.0) {
        return Err(NnError::Config("period must be > 0 and gap tolerance >= 0".into()));
    }
    let mut readings: Vec<(f64, f64)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|c| !c.is_empty()).collect();
        let bad = || NnError::Data(format!("line {}: expected `seconds watts`, got `{line}`", n + 1));
        if cols.len() != 2 {
            return Err(bad());
        }
        let t: f64 = cols[0].parse().map_err(|_| bad())?;
        let w: f64 = cols[1].parse().map_err(|_| bad())?;
        if !t.is_finite() || !w.is_finite() || w < 0.0 {
            return Err(NnError::Data(format!("line {}: non-finite time or negative power", n + 1)));
        }
        if let Some(&(prev, _)) = readings.last() {
            if t <= prev {
                return Err(NnError::Data(format!("line {}: timestamps must increase", n + 1)));
            }
        }
        readings.push((t, w));
    }
    let (first, last) = match (readings.first(), readings.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(NnError::Data("series holds no readings".into())),
    };
    let len = ((last - first) / period_s).floor() as usize + 1;
    let mut watts = Vec::with_capacity(len);
    let mut gap = Vec::with_capacity(len);
    let mut j = 0;
    for k in 0..len {
        let t = first + k as f64 * period_s;
        while j + 1 < readings.len() && readings[j + 1].0 <= t + 1e-9 {
            j += 1;
        }
        let (rt, rw) = readings[j];
        if t - rt <= max_gap_s + 1e-9 {
            watts.push(rw);
            gap.push(false);
        } else {
            watts.push(0.0);
            gap.push(true);
        }
    }
    Ok(PowerSeries {
        start_s: first,
        period_s,
        watts,
        gap,
    })
}

/// Trains one model per configuration and scores it on `validation`,
/// returning the results in input order.
pub fn grid_search(
    appliance_id: &str,
    train: &[DisaggWindow],
    validation: &[DisaggWindow],
    grid: &[CvaeConfig],
    cfg: &TrainConfig,
) -> Result<Vec<(CvaeConfig, DisaggScore)>> {
    let truth: Vec<Vec<f64>> = validation.iter().map(|w| w.target.clone()).collect();
    grid.iter()
        .map(|c| {
            let mut m = Cvae::new(appliance_id, c.clone(), cfg.seed)?;
            train_disagg(&mut m, train, cfg)?;
            let agg: Vec<&[f64]> = validation.iter().map(|w| w.aggregate.as_slice()).collect();
            let est = m.disaggregate_batch(&agg)?;
            Ok((c.clone(), score(&truth, &est)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_parsing_fills_short_gaps_only() {
        let text = "# t w\n0 100\n6,110\n\n13 120\n400 50\n";
        let s = parse_power_series(text, 6.0, 30.0).unwrap();
        assert_eq!(s.watts.len(), 67);
        assert_eq!(&s.watts[..4], &[100.0, 110.0, 110.0, 120.0]);
        // 0, 6, 12 from their own readings; 18..=42 from the one at 13 s.
        assert_eq!(s.gap.iter().filter(|g| !**g).count(), 3 + 5);
        assert_eq!(*s.watts.last().unwrap(), 0.0);
        assert!(parse_power_series("5 1\n5 2\n", 6.0, 30.0).is_err());
        assert!(parse_power_series("1 2 3\n", 6.0, 30.0).is_err());
        assert!(parse_power_series("", 6.0, 30.0).is_err());
    }

    #[test]
    fn decoder_reaches_every_supported_window() {
        for (t, s) in SUPPORTED_WINDOWS.iter().flat_map(|&t| [(t, 1), (t, 2)]) {
            let c = Cvae::new(
                "kettle",
                CvaeConfig {
                    window: t,
                    decoder_stride: s,
                    ..CvaeConfig::default()
                },
                1,
            )
            .unwrap();
            // Transposed-convolution length arithmetic, layer by layer.
            let l1 = c.decoder.shapes()[3][1];
            let l2 = (l1 - 1) * s + 4;
            assert_eq!((l2 - 1) * s + 6, t);
            assert_eq!(c.decoder.output_shape(), [1, t]);
            let z = vec![0.3; 16];
            assert_eq!(c.decode(&[&z]).unwrap()[0].len(), t);
        }
        assert!(Cvae::new(
            "kettle",
            CvaeConfig {
                window: 66,
                decoder_stride: 2,
                ..CvaeConfig::default()
            },
            1
        )
        .is_err());
    }

    #[test]
    fn zero_weight_encoder_returns_biases() {
        let mut c = Cvae::new("kettle", CvaeConfig::default(), 2).unwrap();
        let last = c.encoder.params_mut().last_mut().unwrap();
        last.weight.iter_mut().for_each(|w| *w = 0.0);
        last.bias = (0..32).map(|i| i as f64 * 0.1 - 1.0).collect();
        let x = vec![0.5; 128];
        let h = c.encode(&[&x]).unwrap();
        assert_eq!(h[0].mu, (0..16).map(|i| i as f64 * 0.1 - 1.0).collect::<Vec<_>>());
        assert_eq!(h, c.encode(&[&x]).unwrap());
    }

    #[test]
    fn zero_weight_decoder_is_constant_bias() {
        let mut c = Cvae::new("kettle", CvaeConfig::default(), 3).unwrap();
        for p in c.decoder.params_mut() {
            p.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        c.decoder.params_mut().last_mut().unwrap().bias = vec![0.25];
        let out = c.decode(&[&[1.0; 16]]).unwrap();
        assert!(out[0].iter().all(|&v| v == 0.25));
    }

    #[test]
    fn reparameterize_limits_and_moments() {
        let p = LatentParams {
            mu: vec![0.7, -0.2],
            logvar: vec![f64::NEG_INFINITY, -1e9],
        };
        let z = reparameterize(&p, 4);
        assert_eq!(z, vec![0.7, -0.2]);
        let p = LatentParams {
            mu: vec![0.0; 100_000],
            logvar: vec![0.0; 100_000],
        };
        let z = reparameterize(&p, 5);
        let m = z.iter().sum::<f64>() / z.len() as f64;
        let v = z.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / z.len() as f64;
        assert!(m.abs() < 0.02 && (v - 1.0).abs() < 0.02, "{m} {v}");
        assert_eq!(reparameterize(&p, 5), z);
    }

    #[test]
    fn metric_examples() {
        let y = vec![0.0, 100.0, 2000.0, 50.0];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(sae(&y, &y).unwrap(), 0.0);
        let plus: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
        assert!((mae(&y, &plus).unwrap() - 5.0).abs() < 1e-12);
        let scaled: Vec<f64> = y.iter().map(|v| v * 1.1).collect();
        assert!((sae(&y, &scaled).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(sae(&[0.0; 3], &[1.0; 3]), Err(NnError::Undefined(_))));
    }

    #[test]
    fn normalization_round_trip() {
        let x: Vec<f64> = (0..128).map(|i| 300.0 + (i as f64 * 0.3).sin() * 150.0).collect();
        let (m, s) = window_stats(&x);
        let back = denormalize(&normalize(&x, m, s), m, s);
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn lambda_zero_and_perfect_fit() {
        let c = Cvae::new("kettle", CvaeConfig::default(), 6).unwrap();
        let x: Vec<f64> = (0..128).map(|i| (i as f64 * 0.1).cos()).collect();
        let y = vec![0.0; 128];
        let l = cvae_loss(&c, &x, &y, 0.0, 1).unwrap();
        assert_eq!(l.total, l.estimation);
        let l1 = cvae_loss(&c, &x, &y, 0.1, 1).unwrap();
        assert!((l1.total - (l1.estimation + 0.1 * l1.variational)).abs() < 1e-12);
    }

    #[test]
    fn mixed_appliances_are_rejected() {
        let cfg = DisaggCorpusConfig::default();
        let mut w = gen_disagg_corpus("kettle", 4, &cfg, 1).unwrap();
        w[2].appliance_id = "fridge".into();
        let mut m = Cvae::new("kettle", CvaeConfig::default(), 1).unwrap();
        assert!(matches!(train_disagg(&mut m, &w, &TrainConfig::default()), Err(NnError::Data(_))));
    }

    #[test]
    fn corpus_is_half_target() {
        let w = gen_disagg_corpus("kettle", 40, &DisaggCorpusConfig::default(), 8).unwrap();
        assert_eq!(w.iter().filter(|w| w.contains_target()).count(), 20);
        assert!(w.iter().all(|w| w.len() == 128 && w.aggregate.iter().all(|&v| v >= 0.0)));
        assert!(w.iter().filter(|w| !w.contains_target()).all(|w| w.target.iter().all(|&v| v == 0.0)));
        assert_eq!(w, gen_disagg_corpus("kettle", 40, &DisaggCorpusConfig::default(), 8).unwrap());
    }
}
