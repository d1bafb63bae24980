//! Versioned JSON model documents. Parameter arrays are stored as base64
//! strings of little-endian f64 values so that a round trip is bit-exact.
//!
//! ```json
//! {
//!   "format": "gridwatch-model",
//!   "version": 1,
//!   "kind": "hif_cnn",
//!   "networks": {
//!     "main": {
//!       "input_shape": [1, 8, 6],
//!       "layers": [{"kind": "conv2d", "filters": 4, ...}, ...],
//!       "params": [{"weight": "<b64>", "bias": "<b64>",
//!                   "running_mean": "<b64>", "running_var": "<b64>"}, ...]
//!     }
//!   },
//!   "vectors": {"input_mean": "<b64>"},
//!   "meta": {"classes": ["hif", "healthy"], "trained": true}
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::network::{LayerParams, LayerSpec, Network};

pub const MODEL_FORMAT: &str = "gridwatch-model";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_f64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| NnError::Format(format!("bad base64 blob: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(NnError::Format(format!("blob of {} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDoc {
    weight: String,
    bias: String,
    running_mean: String,
    running_var: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<ParamDoc>,
}

impl NetworkDoc {
    fn from_network(n: &Network) -> Self {
        NetworkDoc {
            input_shape: n.input_shape().to_vec(),
            layers: n.layers().to_vec(),
            params: n
                .params()
                .iter()
                .map(|p| ParamDoc {
                    weight: encode_f64(&p.weight),
                    bias: encode_f64(&p.bias),
                    running_mean: encode_f64(&p.running_mean),
                    running_var: encode_f64(&p.running_var),
                })
                .collect(),
        }
    }

    fn into_network(self) -> Result<Network> {
        let params = self
            .params
            .iter()
            .map(|p| {
                Ok(LayerParams {
                    weight: decode_f64(&p.weight)?,
                    bias: decode_f64(&p.bias)?,
                    running_mean: decode_f64(&p.running_mean)?,
                    running_var: decode_f64(&p.running_var)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::from_parts(&self.input_shape, self.layers, params)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    kind: String,
    networks: BTreeMap<String, NetworkDoc>,
    #[serde(default)]
    vectors: BTreeMap<String, String>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

/// A set of named networks and vectors plus free-form metadata.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub kind: String,
    pub networks: BTreeMap<String, Network>,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ModelFile {
    pub fn new(kind: &str) -> Self {
        ModelFile {
            kind: kind.to_string(),
            networks: BTreeMap::new(),
            vectors: BTreeMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn network(&self, name: &str) -> Result<&Network> {
        self.networks
            .get(name)
            .ok_or_else(|| NnError::Format(format!("{} model has no network `{name}`", self.kind)))
    }

    pub fn vector(&self, name: &str) -> Result<&[f64]> {
        self.vectors
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| NnError::Format(format!("{} model has no vector `{name}`", self.kind)))
    }

    pub fn meta_field<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        let v = self
            .meta
            .get(name)
            .ok_or_else(|| NnError::Format(format!("{} model has no meta field `{name}`", self.kind)))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    /// Fails unless the document is of `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(NnError::Format(format!(
                "expected a {kind} model, found {} (format version {MODEL_VERSION})",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kind: self.kind.clone(),
            networks: self
                .networks
                .iter()
                .map(|(k, n)| (k.clone(), NetworkDoc::from_network(n)))
                .collect(),
            vectors: self.vectors.iter().map(|(k, v)| (k.clone(), encode_f64(v))).collect(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let head: serde_json::Value = serde_json::from_str(text)?;
        match head.get("format").and_then(|v| v.as_str()) {
            Some(MODEL_FORMAT) => {}
            other => {
                return Err(NnError::Format(format!(
                    "not a {MODEL_FORMAT} document (format {other:?})"
                )))
            }
        }
        match head.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) if v > MODEL_VERSION as u64 => {
                return Err(NnError::Format(format!(
                    "model version {v} is newer than supported version {MODEL_VERSION}"
                )))
            }
            other => {
                return Err(NnError::Format(format!(
                    "unsupported model version {other:?}, expected {MODEL_VERSION}"
                )))
            }
        }
        let doc: ModelDoc = serde_json::from_value(head)?;
        Ok(ModelFile {
            kind: doc.kind,
            networks: doc
                .networks
                .into_iter()
                .map(|(k, n)| Ok((k, n.into_network()?)))
                .collect::<Result<_>>()?,
            vectors: doc
                .vectors
                .into_iter()
                .map(|(k, v)| Ok((k, decode_f64(&v)?)))
                .collect::<Result<_>>()?,
            meta: doc.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn blob_round_trip_is_bitwise() {
        let v = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -3.25];
        let back = decode_f64(&encode_f64(&v)).unwrap();
        assert_eq!(
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(decode_f64("AAAA").is_err());
    }

    #[test]
    fn network_round_trip_reproduces_outputs() {
        let mut n = Network::build(
            &[1, 4, 4],
            vec![
                LayerSpec::Conv2d {
                    filters: 2,
                    channels: 1,
                    kernel_h: 2,
                    kernel_w: 2,
                    stride: 1,
                },
                LayerSpec::Batchnorm { channels: 2 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 18, outputs: 3 },
                LayerSpec::Softmax,
            ],
            7,
        )
        .unwrap();
        let x = Tensor::new(vec![2, 1, 4, 4], (0..32).map(|i| (i as f64).cos()).collect()).unwrap();
        n.forward_train(&x).unwrap();
        let mut m = ModelFile::new("test");
        m.networks.insert("main".into(), n.clone());
        m.vectors.insert("scale".into(), vec![0.3, 0.7]);
        let back = ModelFile::from_json(&m.to_json().unwrap()).unwrap();
        let a = n.infer(&x).unwrap();
        let b = back.network("main").unwrap().infer(&x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.vector("scale").unwrap(), &[0.3, 0.7]);
    }

    #[test]
    fn newer_version_fails_loudly() {
        let m = ModelFile::new("test");
        let text = m.to_json().unwrap().replace("\"version\": 1", "\"version\": 2");
        let err = ModelFile::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("newer"), "{err}");
        assert!(ModelFile::from_json("{\"format\": \"other\"}").is_err());
    }
}
