//! R-count plausibility gate and four-cycle feature-wave extraction.

use serde::{Deserialize, Serialize};

use crate::dsp::interp_linear;
use crate::rpeak::RPeaks;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub min_bpm: f64,
    pub max_bpm: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            min_bpm: 30.0,
            max_bpm: 200.0,
        }
    }
}

impl GateConfig {
    /// Closed interval of admissible R counts for a record of `duration` seconds.
    pub fn count_range(&self, duration: f64) -> (usize, usize) {
        let lo = (duration * self.min_bpm / 60.0).ceil().max(0.0) as usize;
        let hi = (duration * self.max_bpm / 60.0).floor().max(0.0) as usize;
        (lo, hi)
    }
}

/// True when the peak count is implausible for the record length.
pub fn gate_noise(peaks: &RPeaks, duration: f64, cfg: &GateConfig) -> Result<bool> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    let (lo, hi) = cfg.count_range(duration);
    let n = peaks.len();
    Ok(n < lo || n > hi)
}

/// Peaks spanned by one feature wave: four cycles need five beats.
const WINDOW_BEATS: usize = 5;
/// Fewer detected beats than this cannot centre the window away from the edges.
pub const MIN_PEAKS: usize = 6;

/// Why a wave was replaced by zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    CountOutOfRange,
    TooFewPeaks,
}

/// Fixed-length feature wave, or the all-zero sequence for gated records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWave {
    samples: Vec<f64>,
    gate: Option<GateReason>,
    source_id: String,
    /// Effective sampling rate after resampling to the fixed length.
    fs: f64,
}

impl FeatureWave {
    pub fn new(
        samples: Vec<f64>,
        gate: Option<GateReason>,
        source_id: impl Into<String>,
        fs: f64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("feature wave must be nonempty"));
        }
        if gate.is_some() && samples.iter().any(|&v| v != 0.0) {
            return Err(Error::invalid("gated feature wave must be all zeros"));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid("feature wave rate must be positive"));
        }
        Ok(Self {
            samples,
            gate,
            source_id: source_id.into(),
            fs,
        })
    }

    pub fn zeros(len: usize, reason: GateReason, source_id: impl Into<String>, fs: f64) -> Self {
        Self {
            samples: vec![0.0; len],
            gate: Some(reason),
            source_id: source_id.into(),
            fs,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_noise_gated(&self) -> bool {
        self.gate.is_some()
    }

    pub fn gate_reason(&self) -> Option<GateReason> {
        self.gate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }
}

/// Sample span `[start, end]` of the five beats centred on the middle peak.
pub fn window_bounds(peaks: &RPeaks) -> Option<(usize, usize)> {
    let idx = peaks.indices();
    if idx.len() < MIN_PEAKS {
        return None;
    }
    let mid = idx.len() / 2;
    Some((idx[mid - 2], idx[mid - 2 + WINDOW_BEATS - 1]))
}

/// Cut four RR cycles around the middle beat from `x` (the filtered record)
/// and resample them to `len` points. Point `i` sits at `start + i * span / len`,
/// so the grid covers `[start, end)` and a periodic source stays periodic
/// with period `len / 4`.
pub fn extract_feature_wave(
    x: &[f64],
    fs: f64,
    source_id: &str,
    peaks: &RPeaks,
    gated: bool,
    len: usize,
) -> Result<FeatureWave> {
    if len == 0 {
        return Err(Error::invalid("feature length must be positive"));
    }
    if gated {
        return Ok(FeatureWave::zeros(len, GateReason::CountOutOfRange, source_id, fs));
    }
    let Some((start, end)) = window_bounds(peaks) else {
        return Ok(FeatureWave::zeros(len, GateReason::TooFewPeaks, source_id, fs));
    };
    if end >= x.len() {
        return Err(Error::invalid(format!(
            "peak index {end} outside signal of {} samples",
            x.len()
        )));
    }
    let window = &x[start..=end];
    let span = (end - start) as f64;
    let step = span / len as f64;
    let samples = (0..len).map(|i| interp_linear(window, i as f64 * step)).collect();
    FeatureWave::new(samples, None, source_id, fs / step)
}
