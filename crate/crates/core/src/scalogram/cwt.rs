use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WaveletTable;
use crate::{Error, Result};

/// CWT coefficients, row `j` for `scales[j]`, column `i` for shift `i * stride`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalogram {
    coeffs: Vec<f64>,
    rows: usize,
    cols: usize,
    scales: Vec<f64>,
    fs: f64,
}

impl Scalogram {
    pub fn new(coeffs: Vec<f64>, rows: usize, cols: usize, scales: Vec<f64>, fs: f64) -> Result<Self> {
        if coeffs.len() != rows * cols {
            return Err(Error::Shape {
                expected: vec![rows, cols],
                actual: vec![coeffs.len()],
            });
        }
        if scales.len() != rows {
            return Err(Error::invalid(format!(
                "{} scales for {rows} rows",
                scales.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite scalogram coefficient"));
        }
        Ok(Self {
            coeffs,
            rows,
            cols,
            scales,
            fs,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.coeffs[j * self.cols..(j + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.coeffs[row * self.cols + col]
    }
}

/// Every shift, stride 1.
pub fn cwt(wave: &[f64], fs: f64, scales: &[f64], wavelet: &WaveletTable) -> Result<Scalogram> {
    cwt_strided(wave, fs, scales, wavelet, 1)
}

/// `W(a, b) = (a dt)^(-1/2) dt sum_k f[k] psi((k - b) / a)` with `a` in
/// samples, `b = i * stride` and `dt = 1/fs`. The signal is zero outside its
/// support, so only `k` in `[b, b + support * a]` contributes.
///
/// Kernels are tabulated once per scale and rows run in parallel; each row
/// sums in a fixed serial order, so output does not depend on scheduling.
pub fn cwt_strided(
    wave: &[f64],
    fs: f64,
    scales: &[f64],
    wavelet: &WaveletTable,
    stride: usize,
) -> Result<Scalogram> {
    let n = wave.len();
    if n == 0 {
        return Err(Error::invalid("empty signal"));
    }
    if scales.is_empty() {
        return Err(Error::invalid("no scales"));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::invalid("sampling rate must be positive"));
    }
    let (_, t_max) = wavelet.support();
    for &a in scales {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::invalid(format!("scale {a} is not positive")));
        }
        if t_max * a > 8.0 * n as f64 {
            return Err(Error::invalid(format!(
                "scale {a} dilates the wavelet to {} samples, beyond 8x the {n}-sample signal",
                t_max * a
            )));
        }
    }
    if let Some(i) = wave.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite sample at index {i}")));
    }

    let dt = 1.0 / fs;
    let cols = n.div_ceil(stride);
    let rows: Vec<Vec<f64>> = scales
        .par_iter()
        .map(|&a| {
            let reach = (t_max * a).floor() as usize;
            let kernel: Vec<f64> = (0..=reach).map(|d| wavelet.value_at(d as f64 / a)).collect();
            let norm = (a * dt).powf(-0.5) * dt;
            (0..cols)
                .map(|c| {
                    let b = c * stride;
                    let end = (b + kernel.len()).min(n);
                    let s: f64 = wave[b..end]
                        .iter()
                        .zip(&kernel)
                        .map(|(f, k)| f * k)
                        .sum();
                    norm * s
                })
                .collect()
        })
        .collect();

    Scalogram::new(rows.concat(), scales.len(), cols, scales.to_vec(), fs)
}
