//! Sample files: a JSON sidecar describing a companion payload.
//!
//! ```json
//! {
//!   "format": "gridwatch-samples",
//!   "version": 1,
//!   "sample_rate_hz": 20000.0,
//!   "channel_label": "current",
//!   "sample_count": 1792,
//!   "encoding": "f32le",
//!   "payload": "normal_0000.f32"
//! }
//! ```
//!
//! `f32le` payloads hold little-endian 32-bit floats; `text` payloads hold
//! one decimal value per line. The payload path is relative to the sidecar.

use std::path::{Path, PathBuf};

use gridwatch_core::signal::{Channel, SampleStream};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SAMPLE_FORMAT: &str = "gridwatch-samples";
pub const SAMPLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    F32le,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleHeader {
    pub format: String,
    pub version: u32,
    pub sample_rate_hz: f64,
    pub channel_label: String,
    pub sample_count: usize,
    pub encoding: Encoding,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub header: SampleHeader,
    pub samples: Vec<f64>,
}

impl SampleFile {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, channel_label: &str, encoding: Encoding) -> Self {
        SampleFile {
            header: SampleHeader {
                format: SAMPLE_FORMAT.into(),
                version: SAMPLE_VERSION,
                sample_rate_hz,
                channel_label: channel_label.into(),
                sample_count: samples.len(),
                encoding,
                payload: String::new(),
            },
            samples,
        }
    }

    /// Writes `<stem>.json` and its payload next to it.
    pub fn write(&mut self, sidecar: &Path) -> Result<()> {
        let ext = match self.header.encoding {
            Encoding::F32le => "f32",
            Encoding::Text => "txt",
        };
        let payload = sidecar.with_extension(ext);
        self.header.payload = payload
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CliError::Usage(format!("bad sample path {}", sidecar.display())))?
            .to_string();
        self.header.sample_count = self.samples.len();
        let bytes: Vec<u8> = match self.header.encoding {
            Encoding::F32le => self.samples.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect(),
            Encoding::Text => self.samples.iter().map(|v| format!("{v}\n")).collect::<String>().into_bytes(),
        };
        std::fs::write(&payload, bytes).map_err(|e| CliError::io(&payload, e))?;
        let text = serde_json::to_string_pretty(&self.header)? + "\n";
        std::fs::write(sidecar, text).map_err(|e| CliError::io(sidecar, e))
    }

    pub fn read(sidecar: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(sidecar).map_err(|e| CliError::io(sidecar, e))?;
        let head: serde_json::Value = serde_json::from_str(&text)?;
        if head.get("format").and_then(|v| v.as_str()) != Some(SAMPLE_FORMAT) {
            return Err(CliError::Data(format!("{} is not a {SAMPLE_FORMAT} sidecar", sidecar.display())));
        }
        match head.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == SAMPLE_VERSION as u64 => {}
            Some(v) if v > SAMPLE_VERSION as u64 => {
                return Err(CliError::Data(format!(
                    "sample file version {v} is newer than supported version {SAMPLE_VERSION}"
                )))
            }
            other => return Err(CliError::Data(format!("unsupported sample file version {other:?}"))),
        }
        let header: SampleHeader = serde_json::from_value(head)?;
        let payload: PathBuf = sidecar.parent().unwrap_or(Path::new(".")).join(&header.payload);
        let samples: Vec<f64> = match header.encoding {
            Encoding::F32le => {
                let bytes = std::fs::read(&payload).map_err(|e| CliError::io(&payload, e))?;
                if bytes.len() % 4 != 0 {
                    return Err(CliError::Data(format!("{} is not a whole number of f32", payload.display())));
                }
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect()
            }
            Encoding::Text => std::fs::read_to_string(&payload)
                .map_err(|e| CliError::io(&payload, e))?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    l.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Data(format!("{} line {}: not a number", payload.display(), i + 1)))
                })
                .collect::<Result<_>>()?,
        };
        if samples.len() != header.sample_count {
            return Err(CliError::Data(format!(
                "{} declares {} samples, payload holds {}",
                sidecar.display(),
                header.sample_count,
                samples.len()
            )));
        }
        Ok(SampleFile { header, samples })
    }

    pub fn stream(&self) -> Result<SampleStream> {
        let channel: Channel = self.header.channel_label.parse()?;
        Ok(SampleStream::new(self.samples.clone(), self.header.sample_rate_hz, channel)?)
    }
}
