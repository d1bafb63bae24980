//! HIF CNN, load-identification MLP and detection metrics.

use gridwatch_core::hif_features::{FeatureMap, HIF_BANDS, HIF_FRAMES_PER_MAP};
use gridwatch_core::load_features::LOAD_FEATURES;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model_file::ModelFile;
use crate::network::{LayerSpec, Network};
use crate::optim::TrainConfig;
use crate::tensor::Tensor;
use crate::train::{argmax, train_classifier, TrainHistory};

pub const HIF_LABELS_2: [&str; 2] = ["hif", "healthy"];
pub const HIF_LABELS_3: [&str; 3] = ["hif", "transient", "normal"];
pub const DEFAULT_LOAD_HIDDEN: usize = 16;
/// Lower bound on stored feature standard deviations.
const STD_FLOOR: f64 = 1e-6;

/// 1x8x6 map, conv 2x2 (4), batchnorm, relu, 2x2 max pool, conv 2x2 (6),
/// batchnorm, relu, flatten (12), dense, softmax.
pub fn build_hif_cnn(classes: usize, seed: u64) -> Result<Network> {
    if !(2..=3).contains(&classes) {
        return Err(NnError::Config(format!("HIF CNN has 2 or 3 classes, not {classes}")));
    }
    let layers = vec![
        LayerSpec::Conv2d {
            filters: 4,
            channels: 1,
            kernel_h: 2,
            kernel_w: 2,
            stride: 1,
        },
        LayerSpec::Batchnorm { channels: 4 },
        LayerSpec::Relu,
        LayerSpec::Maxpool2x2,
        LayerSpec::Conv2d {
            filters: 6,
            channels: 4,
            kernel_h: 2,
            kernel_w: 2,
            stride: 1,
        },
        LayerSpec::Batchnorm { channels: 6 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 12,
            outputs: classes,
        },
        LayerSpec::Softmax,
    ];
    Network::build(&[1, HIF_BANDS, HIF_FRAMES_PER_MAP], layers, seed)
}

/// dense(9 -> hidden), relu, dense(hidden -> classes), softmax.
pub fn build_load_mlp(hidden: usize, classes: usize, seed: u64) -> Result<Network> {
    if hidden == 0 || classes < 2 {
        return Err(NnError::Config(format!(
            "load MLP needs hidden >= 1 and classes >= 2, got {hidden} and {classes}"
        )));
    }
    Network::build(
        &[LOAD_FEATURES],
        vec![
            LayerSpec::Dense {
                inputs: LOAD_FEATURES,
                outputs: hidden,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: hidden,
                outputs: classes,
            },
            LayerSpec::Softmax,
        ],
        seed,
    )
}

/// `y_i = 1` iff `z_i` is the unique maximum.
pub fn argmax_one_hot(z: &[f64]) -> Vec<u8> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let hits = z.iter().filter(|&&v| v == m).count();
    z.iter().map(|&v| u8::from(hits == 1 && v == m)).collect()
}

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Standardizer {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).ok_or_else(|| NnError::Data("no rows".into()))?;
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for r in rows {
            if r.len() != n {
                return Err(NnError::Shape("rows of unequal length".into()));
            }
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / count);
        }
        let mut var = vec![0.0; n];
        for r in rows {
            var.iter_mut()
                .zip(r.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / count);
        }
        Ok(Standardizer {
            mean,
            std: var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect(),
        })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HifVerdict {
    pub label: String,
    pub class_index: usize,
    /// Softmax mass of `label`.
    pub probability: f64,
    /// `[start, end)` samples of the feature map.
    pub span: (usize, usize),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Trained or untrained HIF CNN with its input standardization.
#[derive(Debug, Clone)]
pub struct HifClassifier {
    pub net: Network,
    pub labels: Vec<String>,
    pub scaler: Standardizer,
    pub trained: bool,
}

pub const HIF_MODEL_KIND: &str = "hif_cnn";

impl HifClassifier {
    pub fn new(classes: usize, seed: u64) -> Result<Self> {
        let labels: Vec<String> = match classes {
            2 => HIF_LABELS_2.iter().map(|s| s.to_string()).collect(),
            _ => HIF_LABELS_3.iter().map(|s| s.to_string()).collect(),
        };
        Ok(HifClassifier {
            net: build_hif_cnn(classes, seed)?,
            labels,
            scaler: Standardizer::identity(HIF_BANDS * HIF_FRAMES_PER_MAP),
            trained: false,
        })
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    /// Fits the input standardization on `maps` and trains the network.
    pub fn fit(&mut self, maps: &[FeatureMap], labels: &[usize], cfg: &TrainConfig) -> Result<TrainHistory> {
        let raw: Vec<Vec<f64>> = maps.iter().map(|m| m.values().to_vec()).collect();
        if raw.iter().any(|r| r.len() != HIF_BANDS * HIF_FRAMES_PER_MAP) {
            return Err(NnError::Shape("feature maps must be 8 x 6".into()));
        }
        self.scaler = Standardizer::fit(&raw)?;
        let xs: Vec<Vec<f64>> = raw.iter().map(|r| self.scaler.apply(r)).collect();
        let h = train_classifier(&mut self.net, &xs, labels, cfg)?;
        self.trained = true;
        Ok(h)
    }

    pub fn probabilities(&self, maps: &[&FeatureMap]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = maps
            .iter()
            .map(|m| {
                if m.bands() != HIF_BANDS || m.frames() != HIF_FRAMES_PER_MAP {
                    return Err(NnError::Shape(format!(
                        "feature map is {}x{}, expected 8x6",
                        m.bands(),
                        m.frames()
                    )));
                }
                Ok(self.scaler.apply(m.values()))
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        self.net.infer(&Tensor::stack(&refs, self.net.input_shape())?)
    }

    pub fn classify_batch(&self, maps: &[&FeatureMap]) -> Result<Vec<HifVerdict>> {
        let p = self.probabilities(maps)?;
        Ok(maps
            .iter()
            .enumerate()
            .map(|(b, m)| {
                let row = p.sample(b);
                let k = argmax(row);
                HifVerdict {
                    label: self.labels[k].clone(),
                    class_index: k,
                    probability: row[k],
                    span: m.span(),
                    warning: (!self.trained).then(|| "model is untrained".to_string()),
                }
            })
            .collect())
    }

    pub fn classify(&self, map: &FeatureMap) -> Result<HifVerdict> {
        Ok(self.classify_batch(&[map])?.remove(0))
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut m = ModelFile::new(HIF_MODEL_KIND);
        m.networks.insert("main".into(), self.net.clone());
        m.vectors.insert("input_mean".into(), self.scaler.mean.clone());
        m.vectors.insert("input_std".into(), self.scaler.std.clone());
        m.meta.insert("labels".into(), serde_json::json!(self.labels));
        m.meta.insert("trained".into(), serde_json::json!(self.trained));
        m
    }

    pub fn from_model_file(m: &ModelFile) -> Result<Self> {
        m.expect_kind(HIF_MODEL_KIND)?;
        let net = m.network("main")?.clone();
        let labels: Vec<String> = m.meta_field("labels")?;
        if net.output_shape() != [labels.len()] {
            return Err(NnError::Format("label count does not match the network output".into()));
        }
        Ok(HifClassifier {
            net,
            labels,
            scaler: Standardizer {
                mean: m.vector("input_mean")?.to_vec(),
                std: m.vector("input_std")?.to_vec(),
            },
            trained: m.meta_field("trained")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadVerdict {
    pub label: String,
    pub class_index: usize,
    pub probability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Load-identification MLP over 9-element event feature vectors.
#[derive(Debug, Clone)]
pub struct LoadClassifier {
    pub net: Network,
    pub labels: Vec<String>,
    pub scaler: Standardizer,
    pub trained: bool,
}

pub const LOAD_MODEL_KIND: &str = "load_mlp";

impl LoadClassifier {
    pub fn new(hidden: usize, labels: Vec<String>, seed: u64) -> Result<Self> {
        Ok(LoadClassifier {
            net: build_load_mlp(hidden, labels.len(), seed)?,
            labels,
            scaler: Standardizer::identity(LOAD_FEATURES),
            trained: false,
        })
    }

    pub fn fit(&mut self, features: &[Vec<f64>], labels: &[usize], cfg: &TrainConfig) -> Result<TrainHistory> {
        self.scaler = Standardizer::fit(features)?;
        let xs: Vec<Vec<f64>> = features.iter().map(|r| self.scaler.apply(r)).collect();
        let h = train_classifier(&mut self.net, &xs, labels, cfg)?;
        self.trained = true;
        Ok(h)
    }

    pub fn classify_batch(&self, features: &[Vec<f64>]) -> Result<Vec<LoadVerdict>> {
        let rows: Vec<Vec<f64>> = features.iter().map(|r| self.scaler.apply(r)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let p = self.net.infer(&Tensor::stack(&refs, self.net.input_shape())?)?;
        Ok((0..features.len())
            .map(|b| {
                let row = p.sample(b);
                let k = argmax(row);
                LoadVerdict {
                    label: self.labels[k].clone(),
                    class_index: k,
                    probability: row[k],
                    warning: (!self.trained).then(|| "model is untrained".to_string()),
                }
            })
            .collect())
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut m = ModelFile::new(LOAD_MODEL_KIND);
        m.networks.insert("main".into(), self.net.clone());
        m.vectors.insert("input_mean".into(), self.scaler.mean.clone());
        m.vectors.insert("input_std".into(), self.scaler.std.clone());
        m.meta.insert("labels".into(), serde_json::json!(self.labels));
        m.meta.insert("trained".into(), serde_json::json!(self.trained));
        m
    }

    pub fn from_model_file(m: &ModelFile) -> Result<Self> {
        m.expect_kind(LOAD_MODEL_KIND)?;
        let net = m.network("main")?.clone();
        let labels: Vec<String> = m.meta_field("labels")?;
        if net.output_shape() != [labels.len()] || net.input_shape() != [LOAD_FEATURES] {
            return Err(NnError::Format("load model shape does not match its labels".into()));
        }
        Ok(LoadClassifier {
            net,
            labels,
            scaler: Standardizer {
                mean: m.vector("input_mean")?.to_vec(),
                std: m.vector("input_std")?.to_vec(),
            },
            trained: m.meta_field("trained")?,
        })
    }
}

/// Binary confusion counts; the positive class is the fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(NnError::Data("prediction and truth lengths differ".into()));
        }
        let mut c = ConfusionMatrix::default();
        for (p, a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub const SECURITY_SAFETY_NOTE: &str =
    "security and safety share the formula TN/(TN+FN) as published; both are reported";

/// Percentages; `None` where the denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy_pct: Option<f64>,
    pub dependability_pct: Option<f64>,
    pub security_pct: Option<f64>,
    pub safety_pct: Option<f64>,
    pub sensibility_pct: Option<f64>,
    pub note: String,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn evaluate(c: &ConfusionMatrix) -> Result<MetricReport> {
    if c.total() == 0 {
        return Err(NnError::Data("empty confusion matrix".into()));
    }
    Ok(MetricReport {
        accuracy_pct: pct(c.tp + c.tn, c.total()),
        dependability_pct: pct(c.tp, c.tp + c.fp),
        security_pct: pct(c.tn, c.tn + c.fn_),
        safety_pct: pct(c.tn, c.tn + c.fn_),
        sensibility_pct: pct(c.tp, c.tp + c.fn_),
        note: SECURITY_SAFETY_NOTE.into(),
    })
}

/// `table[actual][predicted]` counts.
pub fn confusion_table(predicted: &[usize], actual: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if predicted.len() != actual.len() {
        return Err(NnError::Data("prediction and truth lengths differ".into()));
    }
    let mut t = vec![vec![0u64; classes]; classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p >= classes || a >= classes {
            return Err(NnError::Data(format!("class index out of range for {classes} classes")));
        }
        t[a][p] += 1;
    }
    Ok(t)
}

/// Row-normalized percentages; an empty row is `None` throughout.
pub fn evaluate_multiclass(table: &[Vec<u64>]) -> Result<Vec<Vec<Option<f64>>>> {
    let k = table.len();
    if k < 2 || table.iter().any(|r| r.len() != k) {
        return Err(NnError::Shape(format!("multi-class table must be k x k with k >= 2, got {k} rows")));
    }
    Ok(table
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter().map(|&v| pct(v, total)).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(build_hif_cnn(2, 0).unwrap().param_count(), 168);
        assert_eq!(build_hif_cnn(3, 0).unwrap().param_count(), 181);
        assert_eq!(build_load_mlp(16, 7, 0).unwrap().param_count(), 279);
    }

    #[test]
    fn hif_shape_walk() {
        let n = build_hif_cnn(2, 0).unwrap();
        let s = n.shapes();
        assert_eq!(s[1], vec![4, 7, 5]);
        assert_eq!(s[4], vec![4, 3, 2]);
        assert_eq!(s[5], vec![6, 2, 1]);
        assert_eq!(s[8], vec![12]);
    }

    #[test]
    fn zero_inputs_give_probabilities() {
        let n = build_hif_cnn(3, 1).unwrap();
        let p = n.infer(&Tensor::zeros(&[1, 1, 8, 6])).unwrap();
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let n = build_load_mlp(16, 7, 1).unwrap();
        let p = n.infer(&Tensor::zeros(&[1, 9])).unwrap();
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn one_hot_needs_a_unique_maximum() {
        assert_eq!(argmax_one_hot(&[0.1, 2.0, -1.0]), vec![0, 1, 0]);
        assert_eq!(argmax_one_hot(&[2.0, 2.0, -1.0]), vec![0, 0, 0]);
    }

    #[test]
    fn metric_examples() {
        let r = evaluate(&ConfusionMatrix {
            tp: 10,
            tn: 10,
            fp: 0,
            fn_: 0,
        })
        .unwrap();
        for v in [r.accuracy_pct, r.dependability_pct, r.security_pct, r.safety_pct, r.sensibility_pct] {
            assert_eq!(v, Some(100.0));
        }
        let r = evaluate(&ConfusionMatrix {
            tp: 8,
            tn: 9,
            fp: 1,
            fn_: 2,
        })
        .unwrap();
        assert!((r.accuracy_pct.unwrap() - 85.0).abs() < 1e-9);
        assert!((r.dependability_pct.unwrap() - 800.0 / 9.0).abs() < 1e-9);
        assert!((r.security_pct.unwrap() - 900.0 / 11.0).abs() < 1e-9);
        assert_eq!(r.security_pct, r.safety_pct);
        assert!((r.sensibility_pct.unwrap() - 80.0).abs() < 1e-9);
        assert!(evaluate(&ConfusionMatrix::default()).is_err());
        let r = evaluate(&ConfusionMatrix {
            tp: 0,
            tn: 5,
            fp: 0,
            fn_: 0,
        })
        .unwrap();
        assert_eq!(r.dependability_pct, None);
        assert_eq!(r.sensibility_pct, None);
    }

    #[test]
    fn multiclass_rows() {
        let t = evaluate_multiclass(&[vec![197, 2, 1], vec![0, 10, 0], vec![0, 0, 5]]).unwrap();
        assert_eq!(t[0], vec![Some(98.5), Some(1.0), Some(0.5)]);
        assert_eq!(t[1][1], Some(100.0));
        assert!(evaluate_multiclass(&[vec![1]]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let c = HifClassifier::new(2, 3).unwrap();
        let back = HifClassifier::from_model_file(&ModelFile::from_json(&c.to_model_file().to_json().unwrap()).unwrap())
            .unwrap();
        assert_eq!(back.labels, c.labels);
        assert!(!back.trained);
        let wrong = LoadClassifier::from_model_file(&c.to_model_file());
        assert!(matches!(wrong, Err(NnError::Format(_))));
    }
}
