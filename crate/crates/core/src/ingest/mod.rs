//! Record and label loading, plus a synthetic ECG generator for tests.

mod labels;
pub mod mat5;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use labels::{load_labels, parse_labels, Class, LabelSet};
pub use synth::{synth_ecg, SynthEcg, SynthSpec};

/// Sampling rate assumed when a record carries no metadata.
pub const DEFAULT_FS: f64 = 200.0;

/// mV per ADC unit for challenge `.mat` files.
pub const CHALLENGE_SCALE: f64 = 0.001;

/// One single-lead ECG.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    id: String,
    fs: f64,
    samples: Vec<f64>,
    scale: f64,
}

impl EcgRecord {
    pub fn new(id: impl Into<String>, fs: f64, samples: Vec<f64>) -> Result<Self> {
        Self::with_scale(id, fs, samples, 1.0)
    }

    /// `scale` records the amplitude units per raw integer the samples were
    /// converted with; it is metadata only.
    pub fn with_scale(
        id: impl Into<String>,
        fs: f64,
        samples: Vec<f64>,
        scale: f64,
    ) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("empty signal"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            id: id.into(),
            fs,
            samples,
            scale,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Raw16,
    Mat5,
}

impl RecordFormat {
    /// Guess from the file extension: `.csv`, `.raw16`/`.bin`, `.mat`.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" | "txt" => Some(Self::Csv),
            "raw16" | "bin" | "raw" => Some(Self::Raw16),
            "mat" => Some(Self::Mat5),
            _ => None,
        }
    }
}

impl FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "raw16" => Ok(Self::Raw16),
            "mat5" | "mat" => Ok(Self::Mat5),
            other => Err(Error::invalid(format!("unknown record format '{other}'"))),
        }
    }
}

/// JSON metadata stored next to a record as `<name>.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let side = sidecar_path(path);
    if side == path || !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(sidecar)?;
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

fn stem_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Load a record. Missing sidecar fields fall back to the file stem for the
/// id, `default_fs` for the rate and the format's natural scale (1 for csv,
/// [`CHALLENGE_SCALE`] for mat5). raw16 requires a sidecar with `fs` and `scale`.
pub fn load_record(path: &Path, format: RecordFormat, default_fs: f64) -> Result<EcgRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = read_sidecar(path)?.unwrap_or_default();
    let id = side.id.clone().unwrap_or_else(|| stem_id(path));
    match format {
        RecordFormat::Csv => {
            let samples = parse_csv_samples(&bytes)?;
            let fs = side.fs.unwrap_or(default_fs);
            let scale = side.scale.unwrap_or(1.0);
            let samples = samples.into_iter().map(|x| x * scale).collect();
            EcgRecord::with_scale(id, fs, samples, scale)
        }
        RecordFormat::Raw16 => {
            let fs = side
                .fs
                .ok_or_else(|| Error::invalid("raw16 sidecar is missing 'fs'"))?;
            let scale = side
                .scale
                .ok_or_else(|| Error::invalid("raw16 sidecar is missing 'scale'"))?;
            let raw = parse_raw16(&bytes)?;
            let samples = raw.into_iter().map(|v| f64::from(v) * scale).collect();
            EcgRecord::with_scale(id, fs, samples, scale)
        }
        RecordFormat::Mat5 => {
            let raw = mat5::read_val(&bytes)?;
            let fs = side.fs.unwrap_or(default_fs);
            let scale = side.scale.unwrap_or(CHALLENGE_SCALE);
            let samples = raw.into_iter().map(|v| f64::from(v) * scale).collect();
            EcgRecord::with_scale(id, fs, samples, scale)
        }
    }
}

/// One decimal value per line. Blank lines are skipped.
pub fn parse_csv_samples(bytes: &[u8]) -> Result<Vec<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format {
        format: "csv",
        offset: e.valid_up_to() as u64,
        message: "invalid utf-8".into(),
    })?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let field = line.trim();
        if !field.is_empty() {
            let normalized = field.replace('\u{2212}', "-");
            let value: f64 = normalized.parse().map_err(|_| Error::Format {
                format: "csv",
                offset,
                message: format!("cannot parse '{field}' as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Format {
                    format: "csv",
                    offset,
                    message: format!("non-finite value '{field}'"),
                });
            }
            out.push(value);
        }
        offset += line.len() as u64;
    }
    if out.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    Ok(out)
}

pub fn parse_raw16(bytes: &[u8]) -> Result<Vec<i16>> {
    if bytes.len() % 2 != 0 {
        return Err(Error::Format {
            format: "raw16",
            offset: bytes.len() as u64 - 1,
            message: "odd byte count, trailing half sample".into(),
        });
    }
    if bytes.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect())
}

/// Write samples as csv, one value per line. Values print in shortest
/// round-trip form so a reload is bit-exact.
pub fn write_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(values.len() * 12);
    for v in values {
        text.push_str(&v.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a record as csv plus a sidecar carrying id and fs.
pub fn write_record_csv(path: &Path, record: &EcgRecord) -> Result<()> {
    write_csv(path, record.samples())?;
    write_sidecar(
        path,
        &Sidecar {
            id: Some(record.id().to_string()),
            fs: Some(record.fs()),
            scale: None,
        },
    )
}

/// Quantize to 16-bit integers at `scale` units per count and write the
/// raw16 pair (data + sidecar).
pub fn write_raw16(path: &Path, record: &EcgRecord, scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    let mut bytes = Vec::with_capacity(record.len() * 2);
    for (i, &x) in record.samples().iter().enumerate() {
        let q = (x / scale).round();
        if q < f64::from(i16::MIN) || q > f64::from(i16::MAX) {
            return Err(Error::invalid(format!(
                "sample {i} ({x}) overflows 16 bits at scale {scale}"
            )));
        }
        bytes.extend_from_slice(&(q as i16).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_sidecar(
        path,
        &Sidecar {
            id: Some(record.id().to_string()),
            fs: Some(record.fs()),
            scale: Some(scale),
        },
    )
}
