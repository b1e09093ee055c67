//! Single-sample layer kernels on `[C, H, W]` planes.

/// Geometry of a square convolution with symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    /// Output columns `[lo, hi)` whose input column `o * stride + k - pad` is in bounds.
    fn valid_range(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = (in_len as isize - off + s - 1) / s;
        (lo.max(0) as usize, (hi.max(0) as usize).min(out_len))
    }
}

pub fn conv_forward(
    shape: &ConvShape,
    x: &[f64],
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let (ho, wo) = shape.out_dims(h, w);
    let k = shape.kernel;
    let mut out = vec![0.0; shape.out_c * ho * wo];
    for co in 0..shape.out_c {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..shape.in_c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = shape.valid_range(ky, h, ho);
                for kx in 0..k {
                    let wv = weight[((co * shape.in_c + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = shape.valid_range(kx, w, wo);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * shape.stride + ky - shape.pad;
                        let row = &xin[iy * w..(iy + 1) * w];
                        let orow = &mut plane[oy * wo..(oy + 1) * wo];
                        if shape.stride == 1 {
                            let ix0 = ox_lo + kx - shape.pad;
                            let src = &row[ix0..ix0 + (ox_hi - ox_lo)];
                            for (o, s) in orow[ox_lo..ox_hi].iter_mut().zip(src) {
                                *o += wv * s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * row[ox * shape.stride + kx - shape.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    shape: &ConvShape,
    x: &[f64],
    h: usize,
    w: usize,
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let (ho, wo) = shape.out_dims(h, w);
    let k = shape.kernel;
    let mut grad_in = vec![0.0; shape.in_c * h * w];
    for co in 0..shape.out_c {
        let gplane = &grad_out[co * ho * wo..(co + 1) * ho * wo];
        grad_bias[co] += gplane.iter().sum::<f64>();
        for ci in 0..shape.in_c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            let gin = &mut grad_in[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = shape.valid_range(ky, h, ho);
                for kx in 0..k {
                    let widx = ((co * shape.in_c + ci) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let (ox_lo, ox_hi) = shape.valid_range(kx, w, wo);
                    let mut gw = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * shape.stride + ky - shape.pad;
                        let grow = &gplane[oy * wo..(oy + 1) * wo];
                        if shape.stride == 1 {
                            let ix0 = ox_lo + kx - shape.pad;
                            let n = ox_hi - ox_lo;
                            let xrow = &xin[iy * w + ix0..iy * w + ix0 + n];
                            let g = &grow[ox_lo..ox_hi];
                            gw += g.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                            let irow = &mut gin[iy * w + ix0..iy * w + ix0 + n];
                            for (d, gv) in irow.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * shape.stride + kx - shape.pad;
                                gw += grow[ox] * xin[iy * w + ix];
                                gin[iy * w + ix] += wv * grow[ox];
                            }
                        }
                    }
                    grad_weight[widx] += gw;
                }
            }
        }
    }
    grad_in
}

pub fn relu(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient wherever the activation output was clamped.
pub fn relu_backward(out: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel statistics kept for the backward pass.
pub struct NormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Instance normalization over each channel plane with affine `gamma`, `beta`.
pub fn norm_forward(x: &[f64], channels: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, NormCache) {
    let plane = x.len() / channels;
    let mut out = vec![0.0; x.len()];
    let mut normalized = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; channels];
    for c in 0..channels {
        let xs = &x[c * plane..(c + 1) * plane];
        let mean = xs.iter().sum::<f64>() / plane as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[c] = is;
        for i in 0..plane {
            let n = (xs[i] - mean) * is;
            normalized[c * plane + i] = n;
            out[c * plane + i] = gamma[c] * n + beta[c];
        }
    }
    (out, NormCache { normalized, inv_std })
}

pub fn norm_backward(
    cache: &NormCache,
    channels: usize,
    gamma: &[f64],
    grad_out: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Vec<f64> {
    let plane = grad_out.len() / channels;
    let n = plane as f64;
    let mut grad_in = vec![0.0; grad_out.len()];
    for c in 0..channels {
        let g = &grad_out[c * plane..(c + 1) * plane];
        let xh = &cache.normalized[c * plane..(c + 1) * plane];
        grad_beta[c] += g.iter().sum::<f64>();
        grad_gamma[c] += g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
        let sum_g: f64 = g.iter().sum::<f64>() * gamma[c];
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() * gamma[c];
        let k = cache.inv_std[c] / n;
        for i in 0..plane {
            grad_in[c * plane + i] = k * (n * gamma[c] * g[i] - sum_g - xh[i] * sum_gx);
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit bounds checks.
    fn conv_naive(s: &ConvShape, x: &[f64], h: usize, w: usize, wt: &[f64], b: &[f64]) -> Vec<f64> {
        let (ho, wo) = s.out_dims(h, w);
        let k = s.kernel;
        let mut out = vec![0.0; s.out_c * ho * wo];
        for co in 0..s.out_c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..s.in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                                let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += wt[((co * s.in_c + ci) * k + ky) * k + kx]
                                        * x[ci * h * w + iy as usize * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive() {
        for &(stride, pad, kernel) in &[(1, 1, 3), (2, 1, 3), (2, 0, 1), (1, 0, 1)] {
            let s = ConvShape { in_c: 3, out_c: 2, kernel, stride, pad };
            let (h, w) = (7, 9);
            let x = pseudo(3 * h * w, 1);
            let wt = pseudo(s.weight_len(), 2);
            let b = pseudo(2, 3);
            let fast = conv_forward(&s, &x, h, w, &wt, &b);
            let slow = conv_naive(&s, &x, h, w, &wt, &b);
            for (a, c) in fast.iter().zip(&slow) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> - <b, sum g> = <x, conv^T(g)>
        for &(stride, pad, kernel) in &[(1, 1, 3), (2, 1, 3), (2, 0, 1)] {
            let s = ConvShape { in_c: 2, out_c: 3, kernel, stride, pad };
            let (h, w) = (6, 5);
            let (ho, wo) = s.out_dims(h, w);
            let x = pseudo(2 * h * w, 4);
            let wt = pseudo(s.weight_len(), 5);
            let zero_b = vec![0.0; 3];
            let g = pseudo(3 * ho * wo, 6);
            let y = conv_forward(&s, &x, h, w, &wt, &zero_b);
            let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
            let mut gw = vec![0.0; s.weight_len()];
            let mut gb = vec![0.0; 3];
            let gx = conv_backward(&s, &x, h, w, &wt, &g, &mut gw, &mut gb);
            let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
            // linear in weights too
            let rhs_w: f64 = wt.iter().zip(&gw).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs_w).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_output_standardized() {
        let x = pseudo(2 * 16, 9);
        let (y, _) = norm_forward(&x, 2, &[1.0, 1.0], &[0.0, 0.0]);
        for c in 0..2 {
            let p = &y[c * 16..(c + 1) * 16];
            let mean = p.iter().sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
        }
    }
}
