//! Pan-Tompkins QRS detection.
//!
//! The chain is band-pass → five-point derivative → squaring → moving-window
//! integration, all at 200 Hz (records at other rates are linearly resampled
//! first). Beats are picked from the integrated waveform with the classic
//! dual-threshold logic and then localized on the band-passed signal.

use serde::{Deserialize, Serialize};

use crate::dsp::{resample_linear, Filter, RationalFilter};
use crate::ingest::EcgRecord;
use crate::{Error, Result};

/// Rate the integer-coefficient filters were designed for.
pub const PT_FS: f64 = 200.0;

/// Combined group delay of [`pt_lowpass`] (5) and [`pt_highpass`] (16), in samples.
pub const PT_BANDPASS_DELAY: usize = 21;

/// `(1 - z^-6)^2 / (1 - z^-1)^2`.
pub fn pt_lowpass() -> RationalFilter {
    let mut num = vec![0.0; 13];
    num[0] = 1.0;
    num[6] = -2.0;
    num[12] = 1.0;
    RationalFilter::new(num, vec![1.0, -2.0, 1.0]).expect("static coefficients")
}

/// `(-1 + 32 z^-16 + z^-32) / (1 + z^-1)`, coefficient for coefficient as
/// the high-pass is usually printed. Its response is not high-pass (gain 16
/// at DC, unbounded at Nyquist) so detection uses [`pt_highpass`] instead.
pub fn pt_highpass_printed() -> RationalFilter {
    let mut num = vec![0.0; 33];
    num[0] = -1.0;
    num[16] = 32.0;
    num[32] = 1.0;
    RationalFilter::new(num, vec![1.0, 1.0]).expect("static coefficients")
}

/// High-pass built as a 16-sample delay minus a 32-point moving average:
/// `(-1 + 32 z^-16 - 32 z^-17 + z^-32) / (32 (1 - z^-1))`.
pub fn pt_highpass() -> RationalFilter {
    let mut num = vec![0.0; 33];
    num[0] = -1.0;
    num[16] = 32.0;
    num[17] = -32.0;
    num[32] = 1.0;
    RationalFilter::new(num, vec![32.0, -32.0]).expect("static coefficients")
}

/// Low-pass then high-pass, zero initial conditions.
pub fn pt_bandpass(x: &[f64]) -> Result<Vec<f64>> {
    let low = pt_lowpass().apply(x)?;
    pt_highpass().apply(&low)
}

/// `y(n) = (-x(n-2) - 2x(n-1) + 2x(n+1) + x(n+2)) / (8T)`, zero outside the signal.
pub fn pt_derivative(x: &[f64], fs: f64) -> Vec<f64> {
    let at = |i: isize| -> f64 {
        if i < 0 || i as usize >= x.len() {
            0.0
        } else {
            x[i as usize]
        }
    };
    let scale = fs / 8.0;
    (0..x.len() as isize)
        .map(|n| scale * (-at(n - 2) - 2.0 * at(n - 1) + 2.0 * at(n + 1) + at(n + 2)))
        .collect()
}

pub fn pt_square(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v * v).collect()
}

/// Trailing mean over `window` samples with zero history.
pub fn pt_integrate(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("integration window must be at least 1 sample"));
    }
    let inv = 1.0 / window as f64;
    Ok((0..x.len())
        .map(|n| {
            let lo = (n + 1).saturating_sub(window);
            x[lo..=n].iter().sum::<f64>() * inv
        })
        .collect())
}

/// Every intermediate tap of the detection chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PtChainOutput {
    pub bandpassed: Vec<f64>,
    pub derivative: Vec<f64>,
    pub squared: Vec<f64>,
    pub integrated: Vec<f64>,
}

pub fn pt_chain(x: &[f64], fs: f64, window: usize) -> Result<PtChainOutput> {
    let bandpassed = pt_bandpass(x)?;
    let derivative = pt_derivative(&bandpassed, fs);
    let squared = pt_square(&derivative);
    let integrated = pt_integrate(&squared, window)?;
    Ok(PtChainOutput {
        bandpassed,
        derivative,
        squared,
        integrated,
    })
}

/// Detector constants. Defaults are the classic Pan-Tompkins values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Moving-window integration length in samples at 200 Hz.
    pub window: usize,
    /// Threshold position between noise and signal level.
    pub threshold_fraction: f64,
    /// Exponential update weight for the running peak levels.
    pub update_weight: f64,
    /// Searchback fires after this many average RR intervals without a beat.
    pub searchback_rr: f64,
    /// Searchback threshold relative to the primary threshold.
    pub searchback_ratio: f64,
    pub refractory_s: f64,
    /// Candidates closer than this to the previous beat get the T-wave slope test.
    pub t_wave_s: f64,
    /// Half-width of the band-pass localization window.
    pub refine_s: f64,
    /// Length of the threshold-initialization segment; also the minimum record length.
    pub init_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 30,
            threshold_fraction: 0.25,
            update_weight: 0.125,
            searchback_rr: 1.66,
            searchback_ratio: 0.5,
            refractory_s: 0.2,
            t_wave_s: 0.36,
            refine_s: 0.1,
            init_s: 2.0,
        }
    }
}

/// Detected R positions in the record's own sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RPeaks {
    indices: Vec<usize>,
    fs: f64,
}

impl RPeaks {
    pub fn new(indices: Vec<usize>, fs: f64) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("peak indices must be strictly increasing"));
        }
        Ok(Self { indices, fs })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

struct Levels {
    signal: f64,
    noise: f64,
    fraction: f64,
}

impl Levels {
    fn threshold(&self) -> f64 {
        self.noise + self.fraction * (self.signal - self.noise)
    }
}

/// Local maxima of `x` at least `min_gap` apart, keeping the taller of any
/// close pair (earlier wins on equal height).
fn candidate_peaks(x: &[f64], min_gap: usize) -> Vec<usize> {
    let mut maxima: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1])
        .collect();
    let mut by_height = maxima.clone();
    by_height.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept = vec![false; x.len()];
    let mut taken: Vec<usize> = Vec::new();
    for i in by_height {
        if taken.iter().all(|&t| t.abs_diff(i) >= min_gap) {
            kept[i] = true;
            taken.push(i);
        }
    }
    maxima.retain(|&i| kept[i]);
    maxima
}

/// Beat positions on the 200 Hz integrated waveform.
fn threshold_beats(chain: &PtChainOutput, cfg: &DetectorConfig) -> Vec<usize> {
    let m = &chain.integrated;
    let refractory = (cfg.refractory_s * PT_FS).round() as usize;
    let t_wave = (cfg.t_wave_s * PT_FS).round() as usize;
    let init = ((cfg.init_s * PT_FS).round() as usize).min(m.len());

    let head = &m[..init];
    let mut levels = Levels {
        signal: head.iter().cloned().fold(0.0, f64::max),
        noise: head.iter().sum::<f64>() / init as f64,
        fraction: cfg.threshold_fraction,
    };

    // steepest squared slope over the integration window ending at i
    let slope = |i: usize| -> f64 {
        let lo = (i + 1).saturating_sub(cfg.window);
        chain.squared[lo..=i].iter().cloned().fold(0.0, f64::max)
    };

    let mut beats: Vec<usize> = Vec::new();
    let mut last_slope = 0.0;
    let mut rejected: Vec<usize> = Vec::new();
    let w = cfg.update_weight;

    let rr_average = |beats: &[usize]| -> Option<f64> {
        if beats.len() < 2 {
            return None;
        }
        let tail = &beats[beats.len().saturating_sub(9)..];
        let sum: usize = tail.windows(2).map(|p| p[1] - p[0]).sum();
        Some(sum as f64 / (tail.len() - 1) as f64)
    };

    let search_back = |now: usize,
                           beats: &mut Vec<usize>,
                           rejected: &mut Vec<usize>,
                           levels: &mut Levels,
                           last_slope: &mut f64| {
        let (Some(rr), Some(&last)) = (rr_average(beats), beats.last()) else {
            return;
        };
        if (now - last) as f64 <= cfg.searchback_rr * rr {
            return;
        }
        let low = cfg.searchback_ratio * levels.threshold();
        let best = rejected
            .iter()
            .copied()
            .filter(|&c| c >= last + refractory && m[c] > low)
            .fold(None, |best: Option<usize>, c| match best {
                Some(b) if m[b] >= m[c] => Some(b),
                _ => Some(c),
            });
        if let Some(c) = best {
            levels.signal = 0.25 * m[c] + 0.75 * levels.signal;
            beats.push(c);
            *last_slope = slope(c);
            rejected.retain(|&r| r > c);
        }
    };

    for c in candidate_peaks(m, refractory) {
        search_back(c, &mut beats, &mut rejected, &mut levels, &mut last_slope);

        let mut is_beat = m[c] > levels.threshold();
        if let Some(&last) = beats.last() {
            if c < last + refractory {
                continue;
            }
            if is_beat && c - last < t_wave && slope(c) < 0.5 * last_slope {
                is_beat = false;
            }
        }
        if is_beat {
            levels.signal = w * m[c] + (1.0 - w) * levels.signal;
            beats.push(c);
            last_slope = slope(c);
            rejected.clear();
        } else {
            levels.noise = w * m[c] + (1.0 - w) * levels.noise;
            rejected.push(c);
        }
    }
    search_back(m.len(), &mut beats, &mut rejected, &mut levels, &mut last_slope);
    beats
}

/// Drop any index closer than `min_gap` to its predecessor, keeping the one
/// with the larger `height` (earlier on ties).
fn enforce_gap(indices: Vec<usize>, min_gap: usize, height: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(indices.len());
    for i in indices {
        match out.last_mut() {
            Some(prev) if i < *prev + min_gap => {
                if height(i) > height(*prev) {
                    *prev = i;
                }
            }
            Some(prev) if i == *prev => {}
            _ => out.push(i),
        }
    }
    out
}

/// Full detector: resample to 200 Hz, run the chain, threshold, then place
/// each beat at the band-pass maximum within `refine_s` of the integrated
/// peak (shifted back by the band-pass delay) and map to the record's grid.
pub fn detect_rpeaks(record: &EcgRecord, cfg: &DetectorConfig) -> Result<RPeaks> {
    let fs = record.fs();
    if record.duration() < cfg.init_s {
        return Err(Error::invalid(format!(
            "record '{}' lasts {:.3} s, detection needs at least {} s",
            record.id(),
            record.duration(),
            cfg.init_s
        )));
    }
    let reach = (cfg.refine_s * PT_FS).round() as usize;
    let mut x = resample_linear(record.samples(), fs, PT_FS);
    let len_200 = x.len();
    // zero tail so a beat at the very end still completes its delayed peak
    x.resize(len_200 + PT_BANDPASS_DELAY + cfg.window + reach + 2, 0.0);
    let chain = pt_chain(&x, PT_FS, cfg.window)?;
    let beats = threshold_beats(&chain, cfg);

    let bp = &chain.bandpassed;
    let located: Vec<usize> = beats
        .iter()
        .map(|&c| {
            let lo = c.saturating_sub(reach).max(PT_BANDPASS_DELAY);
            let hi = (c + reach).min(bp.len() - 1);
            let mut best = lo.min(hi);
            for i in lo..=hi {
                if bp[i] > bp[best] {
                    best = i;
                }
            }
            best.saturating_sub(PT_BANDPASS_DELAY).min(len_200 - 1)
        })
        .collect();

    let refractory_200 = (cfg.refractory_s * PT_FS).round() as usize;
    let height = |i: usize| bp.get(i + PT_BANDPASS_DELAY).copied().unwrap_or(f64::MIN);
    let located = enforce_gap(located, refractory_200, height);

    let ratio = fs / PT_FS;
    let n = record.len();
    let mapped: Vec<usize> = located
        .iter()
        .map(|&i| ((i as f64 * ratio).round() as usize).min(n - 1))
        .collect();
    let gap = (cfg.refractory_s * fs).ceil() as usize;
    let samples = record.samples();
    let mapped = enforce_gap(mapped, gap, |i| samples[i]);
    RPeaks::new(mapped, fs)
}
