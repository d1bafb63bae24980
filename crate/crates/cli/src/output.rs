use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// `key=value` pairs, one record per line.
    Text,
    /// One JSON object per line.
    Lines,
}

/// Record sink writing to stdout or a file.
pub struct Output {
    format: Format,
    out: Box<dyn Write>,
}

impl Output {
    pub fn new(format: Format, path: Option<&Path>) -> Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| CliError::io(p, e))?)),
            None => Box::new(std::io::stdout().lock()),
        };
        Ok(Output { format, out })
    }

    pub fn record<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let v = serde_json::to_value(value)?;
        let line = match self.format {
            Format::Lines => serde_json::to_string(&v)?,
            Format::Text => match &v {
                serde_json::Value::Object(m) => m
                    .iter()
                    .map(|(k, v)| match v {
                        serde_json::Value::String(s) => format!("{k}={s}"),
                        other => format!("{k}={other}"),
                    })
                    .collect::<Vec<_>>()
                    .join(" "),
                other => other.to_string(),
            },
        };
        writeln!(self.out, "{line}").map_err(|e| CliError::io(Path::new("<output>"), e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| CliError::io(Path::new("<output>"), e))
    }
}

pub const MANIFEST_FORMAT: &str = "gridwatch-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    /// Path relative to the manifest.
    pub file: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// `hif`, `load`, `disagg` or `pq`.
    pub kind: String,
    pub seed: u64,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(kind: &str, seed: u64) -> Self {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            kind: kind.into(),
            seed,
            rows: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST_NAME);
        std::fs::write(&p, serde_json::to_string_pretty(self)? + "\n").map_err(|e| CliError::io(&p, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        let head: serde_json::Value = serde_json::from_str(&text)?;
        if head.get("format").and_then(|v| v.as_str()) != Some(MANIFEST_FORMAT) {
            return Err(CliError::Data(format!("{} is not a corpus manifest", p.display())));
        }
        match head.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MANIFEST_VERSION as u64 => {}
            Some(v) if v > MANIFEST_VERSION as u64 => {
                return Err(CliError::Data(format!(
                    "manifest version {v} is newer than supported version {MANIFEST_VERSION}"
                )))
            }
            other => return Err(CliError::Data(format!("unsupported manifest version {other:?}"))),
        }
        Ok(serde_json::from_value(head)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(CliError::Data(format!("expected a {kind} corpus, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn path(dir: &Path, row: &ManifestRow) -> PathBuf {
        dir.join(&row.file)
    }
}

/// Held-out split: every fifth row.
pub fn is_held_out(index: usize) -> bool {
    index % 5 == 4
}
