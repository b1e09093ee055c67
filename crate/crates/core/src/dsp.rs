//! IIR filter design and application.
//!
//! Two filter shapes live here: [`IirCascade`], a chain of normalized
//! second-order sections produced by [`design_butterworth_lowpass`], and
//! [`RationalFilter`], an arbitrary ratio of polynomials in `z^-1` used for
//! the integer-coefficient QRS filters. Both evaluate with zero initial
//! conditions and expose their exact frequency response.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub trait Filter {
    /// Run the difference equation over `x` from rest.
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// `H(e^{j theta})` for normalized angular frequency `theta` in rad/sample.
    fn response(&self, theta: f64) -> Complex64;
}

pub fn apply_filter<F: Filter + ?Sized>(filter: &F, x: &[f64]) -> Result<Vec<f64>> {
    filter.apply(x)
}

/// `|H|` at `f` Hz for a filter running at `fs` Hz.
pub fn magnitude_response<F: Filter + ?Sized>(filter: &F, f: f64, fs: f64) -> f64 {
    filter.response(2.0 * PI * f / fs).norm()
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!("non-finite filter input at index {i}"))),
        None => Ok(()),
    }
}

/// `sum_k c[k] e^{-j k theta}`, Horner in `e^{-j theta}`.
fn poly_at(coeffs: &[f64], theta: f64) -> Complex64 {
    horner(coeffs, Complex64::from_polar(1.0, -theta))
}

/// Second-order section `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let a1 = Complex64::new(self.a1, 0.0);
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    fn response(&self, theta: f64) -> Complex64 {
        poly_at(&[self.b0, self.b1, self.b2], theta) / poly_at(&[1.0, self.a1, self.a2], theta)
    }

    /// Transposed direct form II, in place.
    fn run(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * y + s2;
            s2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }
}

/// Cascade of second-order sections with an overall gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirCascade {
    sections: Vec<Biquad>,
    gain: f64,
}

impl IirCascade {
    pub fn new(sections: Vec<Biquad>, gain: f64) -> Result<Self> {
        let finite = sections
            .iter()
            .all(|s| [s.b0, s.b1, s.b2, s.a1, s.a2].iter().all(|c| c.is_finite()));
        if !finite || !gain.is_finite() {
            return Err(Error::invalid("non-finite filter coefficient"));
        }
        let cascade = Self { sections, gain };
        if !cascade.is_stable() {
            return Err(Error::invalid("section pole on or outside the unit circle"));
        }
        Ok(cascade)
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}

impl Filter for IirCascade {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_finite(x)?;
        let mut y: Vec<f64> = x.iter().map(|v| v * self.gain).collect();
        for s in &self.sections {
            s.run(&mut y);
        }
        Ok(y)
    }

    fn response(&self, theta: f64) -> Complex64 {
        self.sections
            .iter()
            .fold(Complex64::new(self.gain, 0.0), |acc, s| acc * s.response(theta))
    }
}

/// Digital Butterworth low-pass: analog prototype, prewarped bilinear
/// transform, one section per conjugate pole pair (plus a first-order
/// section for odd orders). Unity DC gain and exactly -3.01 dB at `fc`.
pub fn design_butterworth_lowpass(order: usize, fc: f64, fs: f64) -> Result<IirCascade> {
    if order == 0 {
        return Err(Error::invalid("filter order must be at least 1"));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
    }
    if !(fc.is_finite() && fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::invalid(format!(
            "cutoff {fc} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            fs / 2.0
        )));
    }
    let w = (PI * fc / fs).tan();
    let w2 = w * w;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    let mut gain = 1.0;
    for k in 0..order / 2 {
        let theta = PI * (2 * k + 1) as f64 / (2 * order) as f64;
        let q = 2.0 * theta.sin();
        let a0 = 1.0 + q * w + w2;
        sections.push(Biquad {
            b0: 1.0,
            b1: 2.0,
            b2: 1.0,
            a1: 2.0 * (w2 - 1.0) / a0,
            a2: (1.0 - q * w + w2) / a0,
        });
        gain *= w2 / a0;
    }
    if order % 2 == 1 {
        let a0 = 1.0 + w;
        sections.push(Biquad {
            b0: 1.0,
            b1: 1.0,
            b2: 0.0,
            a1: (w - 1.0) / a0,
            a2: 0.0,
        });
        gain *= w / a0;
    }
    IirCascade::new(sections, gain)
}

/// `N(z^-1) / D(z^-1)` with coefficients in ascending delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalFilter {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

impl RationalFilter {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if numerator.is_empty() {
            return Err(Error::invalid("empty numerator"));
        }
        match denominator.first() {
            Some(&d0) if d0 != 0.0 => {}
            _ => return Err(Error::invalid("denominator leading coefficient must be nonzero")),
        }
        if numerator.iter().chain(&denominator).any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite filter coefficient"));
        }
        Ok(Self {
            numerator,
            denominator,
        })
    }

    pub fn identity() -> Self {
        Self {
            numerator: vec![1.0],
            denominator: vec![1.0],
        }
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    /// Product of two rational filters (series connection).
    pub fn then(&self, other: &RationalFilter) -> RationalFilter {
        RationalFilter {
            numerator: poly_mul(&self.numerator, &other.numerator),
            denominator: poly_mul(&self.denominator, &other.denominator),
        }
    }
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

impl Filter for RationalFilter {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_finite(x)?;
        let a0 = self.denominator[0];
        let mut y = vec![0.0; x.len()];
        for n in 0..x.len() {
            let mut acc = 0.0;
            for (k, &b) in self.numerator.iter().enumerate().take(n + 1) {
                acc += b * x[n - k];
            }
            for (k, &a) in self.denominator.iter().enumerate().take(n + 1).skip(1) {
                acc -= a * y[n - k];
            }
            y[n] = acc / a0;
        }
        Ok(y)
    }

    /// Where numerator and denominator share a zero on the unit circle (the
    /// moving-sum filters at DC) the value is the limit, taken by repeated
    /// differentiation in `z^-1`.
    fn response(&self, theta: f64) -> Complex64 {
        let w = Complex64::from_polar(1.0, -theta);
        let mut num = self.numerator.clone();
        let mut den = self.denominator.clone();
        loop {
            let n = horner(&num, w);
            let d = horner(&den, w);
            let tiny = 1e-12 * den.iter().map(|c| c.abs()).sum::<f64>();
            if d.norm() > tiny || den.len() < 2 {
                return n / d;
            }
            num = derivative(&num);
            den = derivative(&den);
            if num.is_empty() {
                return Complex64::new(0.0, 0.0);
            }
        }
    }
}

fn horner(coeffs: &[f64], w: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * w + c)
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Value of `x` at fractional index `pos`, linear between neighbours.
/// `pos` is clamped to `[0, len - 1]`.
pub fn interp_linear(x: &[f64], pos: f64) -> f64 {
    let last = x.len() - 1;
    if pos <= 0.0 {
        return x[0];
    }
    if pos >= last as f64 {
        return x[last];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 {
        x[i]
    } else {
        x[i] + frac * (x[i + 1] - x[i])
    }
}

/// Resample from `fs_in` to `fs_out` by linear interpolation. Output sample
/// `i` sits at input time `i / fs_out`; the grid stops at the last input sample.
pub fn resample_linear(x: &[f64], fs_in: f64, fs_out: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    if fs_in == fs_out {
        return x.to_vec();
    }
    let ratio = fs_in / fs_out;
    let n_out = ((x.len() - 1) as f64 / ratio).floor() as usize + 1;
    (0..n_out).map(|i| interp_linear(x, i as f64 * ratio)).collect()
}
