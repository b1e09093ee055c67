//! Daubechies scaling filters by spectral factorization and wavelet
//! sampling by dyadic refinement.

use num_complex::Complex64;
use std::f64::consts::SQRT_2;

use crate::{Error, Result};

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Roots of `sum_k coeffs[k] x^k` by Durand-Kerner iteration, then Newton polish.
fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let degree = coeffs.len() - 1;
    let lead = coeffs[degree];
    let monic: Vec<Complex64> = coeffs.iter().map(|&c| Complex64::new(c / lead, 0.0)).collect();
    let eval = |x: Complex64| monic.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c);
    let deriv = |x: Complex64| {
        monic
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, (k, &c)| acc * x + c * k as f64)
    };

    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..degree).map(|k| seed.powu(k as u32)).collect();
    for _ in 0..500 {
        let mut delta = 0.0f64;
        for i in 0..degree {
            let denom = (0..degree)
                .filter(|&j| j != i)
                .fold(Complex64::new(1.0, 0.0), |acc, j| acc * (roots[i] - roots[j]));
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let d = deriv(*r);
            if d.norm() > 0.0 {
                *r -= eval(*r) / d;
            }
        }
    }
    roots
}

/// Minimum-phase Daubechies scaling filter with `moments` vanishing moments
/// (`2 * moments` taps), normalized to `sum h = sqrt(2)`.
///
/// `|H(w)|^2` factors as `cos^(2N)(w/2) P(sin^2(w/2))` with
/// `P(y) = sum_k C(N-1+k, k) y^k`. Each root `y` of `P` maps to a reciprocal
/// pair `z, 1/z` through `z + 1/z = 2 - 4y`; the filter keeps the root
/// inside the unit circle.
pub fn daubechies_filter(moments: usize) -> Result<Vec<f64>> {
    if !(1..=10).contains(&moments) {
        return Err(Error::invalid(format!(
            "vanishing moments must be in 1..=10, got {moments}"
        )));
    }
    let n = moments;
    // (1 + w)^N in ascending powers of w = z^-1
    let mut poly: Vec<Complex64> = (0..=n).map(|k| Complex64::new(binomial(n, k), 0.0)).collect();
    if n > 1 {
        let p: Vec<f64> = (0..n).map(|k| binomial(n - 1 + k, k)).collect();
        for y in poly_roots(&p) {
            let b = Complex64::new(2.0, 0.0) - y * 4.0;
            let disc = (b * b - 4.0).sqrt();
            let z1 = (b + disc) / 2.0;
            let z2 = (b - disc) / 2.0;
            let z = if z1.norm() < z2.norm() { z1 } else { z2 };
            // multiply by (1 - z w)
            let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
            for (k, &c) in poly.iter().enumerate() {
                next[k] += c;
                next[k + 1] -= c * z;
            }
            poly = next;
        }
    }
    let h: Vec<f64> = poly.iter().map(|c| c.re).collect();
    let sum: f64 = h.iter().sum();
    Ok(h.into_iter().map(|v| v * SQRT_2 / sum).collect())
}

/// Quadrature-mirror high-pass `g_k = (-1)^k h_{L-1-k}`.
pub fn quadrature_mirror(h: &[f64]) -> Vec<f64> {
    let l = h.len();
    (0..l)
        .map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] })
        .collect()
}

/// Solve `a x = b` in place by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() < 1e-14 {
            return Err(Error::invalid("singular refinement system"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Sampled wavelet `psi` on `[0, support]` at `resolution` points per unit time.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletTable {
    filter: Vec<f64>,
    phi: Vec<f64>,
    psi: Vec<f64>,
    resolution: usize,
    support: f64,
}

impl WaveletTable {
    /// Length of the db4 support, `[0, 7]`.
    pub const DB4_SUPPORT: f64 = 7.0;

    /// db4 (four vanishing moments, eight taps) after `iterations` refinements.
    pub fn db4(iterations: u32) -> Result<Self> {
        Self::from_filter(daubechies_filter(4)?, iterations)
    }

    /// Exact dyadic samples of `phi` and `psi` for an orthonormal scaling filter.
    ///
    /// `phi` at the integers is the fixed point of the two-scale relation
    /// (normalized to unit sum); each iteration then fills in the odd
    /// midpoints, doubling resolution. `psi` follows from one more
    /// application of the two-scale relation with the mirror filter.
    pub fn from_filter(filter: Vec<f64>, iterations: u32) -> Result<Self> {
        if iterations < 4 {
            return Err(Error::invalid(format!(
                "cascade needs at least 4 iterations, got {iterations}"
            )));
        }
        if iterations > 20 {
            return Err(Error::invalid("more than 20 cascade iterations"));
        }
        let taps = filter.len();
        if taps < 2 || taps % 2 != 0 {
            return Err(Error::invalid("scaling filter needs an even number of taps"));
        }
        let last = taps - 1;

        // interior integer points 1..last-1; phi(0) = phi(last) = 0
        let interior = last - 1;
        let mut a = vec![vec![0.0; interior]; interior];
        let b_rhs = {
            let mut b = vec![0.0; interior];
            b[interior - 1] = 1.0;
            b
        };
        for (r, row) in a.iter_mut().enumerate().take(interior - 1) {
            let n = r + 1;
            for (c, cell) in row.iter_mut().enumerate() {
                let m = c + 1;
                let k = 2 * n as isize - m as isize;
                let coeff = if (0..taps as isize).contains(&k) {
                    SQRT_2 * filter[k as usize]
                } else {
                    0.0
                };
                *cell = coeff - if n == m { 1.0 } else { 0.0 };
            }
        }
        a[interior - 1] = vec![1.0; interior];
        let inner = solve(a, b_rhs)?;
        let mut phi = vec![0.0; taps];
        phi[1..last].copy_from_slice(&inner);

        for k in 0..iterations {
            let step = 1usize << k;
            let len = last * (step << 1) + 1;
            let mut next = vec![0.0; len];
            for (i, v) in phi.iter().enumerate() {
                next[2 * i] = *v;
            }
            for m in (1..len).step_by(2) {
                let mut s = 0.0;
                for (n, h) in filter.iter().enumerate() {
                    if let Some(idx) = m.checked_sub(n * step) {
                        if idx < phi.len() {
                            s += h * phi[idx];
                        }
                    }
                }
                next[m] = SQRT_2 * s;
            }
            phi = next;
        }

        let resolution = 1usize << iterations;
        let g = quadrature_mirror(&filter);
        let psi: Vec<f64> = (0..phi.len())
            .map(|m| {
                let mut s = 0.0;
                for (k, gk) in g.iter().enumerate() {
                    if let Some(idx) = (2 * m).checked_sub(k * resolution) {
                        if idx < phi.len() {
                            s += gk * phi[idx];
                        }
                    }
                }
                SQRT_2 * s
            })
            .collect();

        Ok(Self {
            filter,
            phi,
            psi,
            resolution,
            support: last as f64,
        })
    }

    pub fn filter(&self) -> &[f64] {
        &self.filter
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Samples per unit time.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn support(&self) -> (f64, f64) {
        (0.0, self.support)
    }

    /// Nearest-sample lookup; zero outside the support.
    #[inline]
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = (t * self.resolution as f64).round();
        if idx < 0.0 || idx >= self.psi.len() as f64 {
            0.0
        } else {
            self.psi[idx as usize]
        }
    }

    /// Riemann sum of `psi`.
    pub fn integral(&self) -> f64 {
        self.psi.iter().sum::<f64>() / self.resolution as f64
    }

    /// Riemann sum of `psi^2`.
    pub fn energy(&self) -> f64 {
        self.psi.iter().map(|v| v * v).sum::<f64>() / self.resolution as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_is_one_moment() {
        let h = daubechies_filter(1).unwrap();
        assert_eq!(h.len(), 2);
        assert!((h[0] - 1.0 / SQRT_2).abs() < 1e-15);
        assert!((h[1] - 1.0 / SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn db2_closed_form() {
        // (1 + sqrt3, 3 + sqrt3, 3 - sqrt3, 1 - sqrt3) / (4 sqrt2)
        let s3 = 3f64.sqrt();
        let expect = [1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3].map(|v| v / (4.0 * SQRT_2));
        let h = daubechies_filter(2).unwrap();
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn filter_orthonormal_for_several_orders() {
        for n in 2..=8 {
            let h = daubechies_filter(n).unwrap();
            for m in 0..n {
                let s: f64 = (0..h.len() - 2 * m).map(|k| h[k] * h[k + 2 * m]).sum();
                let expect = if m == 0 { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-11, "N={n} m={m}: {s}");
            }
        }
    }

    #[test]
    fn too_few_iterations_rejected() {
        assert!(WaveletTable::db4(3).is_err());
        assert!(WaveletTable::db4(4).is_ok());
    }

    #[test]
    fn phi_partition_of_unity() {
        let t = WaveletTable::db4(6).unwrap();
        let res = t.resolution();
        // sum_n phi(x - n) = 1 at every dyadic x in [0, 1)
        for j in 0..res {
            let s: f64 = (0..7).map(|n| t.phi()[j + n * res]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lookup_outside_support_is_zero() {
        let t = WaveletTable::db4(8).unwrap();
        assert_eq!(t.value_at(-0.01), 0.0);
        assert_eq!(t.value_at(7.01), 0.0);
        assert_eq!(t.value_at(1.0), t.psi()[256]);
    }
}
