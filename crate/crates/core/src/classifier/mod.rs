//! Residual CNN over single-channel scalogram images, written from scratch in
//! double precision so its gradients can be checked against finite differences.

mod checkpoint;
mod layers;
mod network;
mod tensor;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::Class;
use crate::{Error, Result};

pub use checkpoint::{load_model, read_model, save_model, write_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::ConvShape;
pub use network::{Layout, NetworkConfig, NormKind, ParamEntry};
pub use tensor::Tensor;
pub use train::{train, train_with, EpochReport, TrainConfig};

/// Metadata recorded by training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

/// Network parameters in one flat vector, addressed through the layout.
#[derive(Debug, Clone)]
pub struct Model {
    layout: Layout,
    params: Vec<f64>,
    meta: TrainingMeta,
}

impl Model {
    /// Fan-in scaled uniform weights, zero biases, unit norm scales.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let layout = Layout::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.param_count()];
        for e in layout.entries() {
            let dst = &mut params[e.offset..e.offset + e.len];
            if e.bound > 0.0 {
                for v in dst.iter_mut() {
                    *v = rng.random_range(-e.bound..e.bound);
                }
            } else {
                dst.iter_mut().for_each(|v| *v = e.fill);
            }
        }
        Ok(Self {
            layout,
            params,
            meta: TrainingMeta {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn from_parts(config: &NetworkConfig, params: Vec<f64>, meta: TrainingMeta) -> Result<Self> {
        let layout = Layout::new(config)?;
        if params.len() != layout.param_count() {
            return Err(Error::Shape {
                expected: vec![layout.param_count()],
                actual: vec![params.len()],
            });
        }
        Ok(Self { layout, params, meta })
    }

    pub fn config(&self) -> &NetworkConfig {
        self.layout.config()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn set_meta(&mut self, meta: TrainingMeta) {
        self.meta = meta;
    }

    /// Parameter slice by name, e.g. `"fc.weight"`.
    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .entries()
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.params[e.offset..e.offset + e.len])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let e = self.layout.entries().iter().find(|e| e.name == name)?.clone();
        Some(&mut self.params[e.offset..e.offset + e.len])
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let cfg = self.config();
        let shape = batch.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.input_height || shape[3] != cfg.input_width {
            let b = shape.first().copied().unwrap_or(0);
            return Err(Error::Shape {
                expected: vec![b, 1, cfg.input_height, cfg.input_width],
                actual: shape.to_vec(),
            });
        }
        Ok(())
    }
}

/// Logits `[B, 4]` for a `[B, 1, H, W]` batch. Samples are independent.
pub fn forward(model: &Model, batch: &Tensor) -> Result<Tensor> {
    model.check_batch(batch)?;
    let b = batch.shape()[0];
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|i| Ok(model.layout.forward_sample(&model.params, batch.outer(i))?.0))
        .collect::<Result<_>>()?;
    Tensor::new(vec![b, model.config().classes], rows.concat())
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, computed stably.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to every parameter (same layout as [`Model::params`]).
pub fn loss_and_grad(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (loss, grads, _) = loss_grad_logits(model, batch, labels)?;
    Ok((loss, grads))
}

/// As [`loss_and_grad`], also returning each sample's logits.
pub(crate) fn loss_grad_logits(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    model.check_batch(batch)?;
    let b = batch.shape()[0];
    if labels.len() != b {
        return Err(Error::invalid(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.config().classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{}", model.config().classes)));
    }
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let inv_b = 1.0 / b as f64;
    let per_sample: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let (logits, cache) = model.layout.forward_sample(&model.params, batch.outer(i))?;
            let loss = cross_entropy(&logits, labels[i]);
            let mut grad_logits = softmax(&logits);
            grad_logits[labels[i]] -= 1.0;
            grad_logits.iter_mut().for_each(|g| *g *= inv_b);
            let grads = model.layout.backward_sample(&model.params, &cache, &grad_logits);
            Ok((loss, grads, logits))
        })
        .collect::<Result<_>>()?;
    // fixed reduction order
    let mut loss = 0.0;
    let mut grads = vec![0.0; model.params.len()];
    let mut all_logits = Vec::with_capacity(b);
    for (l, g, z) in per_sample {
        loss += l;
        for (a, v) in grads.iter_mut().zip(&g) {
            *a += v;
        }
        all_logits.push(z);
    }
    Ok((loss * inv_b, grads, all_logits))
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn class_from_logits(logits: &[f64]) -> Class {
    Class::from_index(argmax(logits)).unwrap_or(Class::Normal)
}

/// Classify one image already sized to the network input, values in `[0, 1]`.
pub fn predict(model: &Model, image: &[f64]) -> Result<Class> {
    let cfg = model.config();
    let batch = Tensor::from_images(&[image], cfg.input_height, cfg.input_width)?;
    let logits = forward(model, &batch)?;
    Ok(class_from_logits(logits.data()))
}

/// Box-filter resample of an `h x w` plane to `out_h x out_w`; each output
/// pixel is the overlap-weighted mean of the input area it covers.
pub fn downsample_area(x: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if x.len() != h * w {
        return Err(Error::Shape {
            expected: vec![h, w],
            actual: vec![x.len()],
        });
    }
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::invalid("resample dimensions must be positive"));
    }
    let weights = |n_in: usize, n_out: usize| -> Vec<Vec<(usize, f64)>> {
        let ratio = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let lo = o as f64 * ratio;
                let hi = (o + 1) as f64 * ratio;
                let mut taps = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < n_in {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((i, overlap / ratio));
                    }
                    i += 1;
                }
                taps
            })
            .collect()
    };
    let wy = weights(h, out_h);
    let wx = weights(w, out_w);
    let mut rows = vec![0.0; out_h * w];
    for (oy, taps) in wy.iter().enumerate() {
        for &(iy, k) in taps {
            for ix in 0..w {
                rows[oy * w + ix] += k * x[iy * w + ix];
            }
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        for (ox, taps) in wx.iter().enumerate() {
            out[oy * out_w + ox] = taps.iter().map(|&(ix, k)| k * rows[oy * w + ix]).sum();
        }
    }
    Ok(out)
}

/// Scale 8-bit pixels to `[0, 1]` and box-resample to the network input size.
pub fn prepare_image(pixels: &[u8], h: usize, w: usize, cfg: &NetworkConfig) -> Result<Vec<f64>> {
    let unit: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    if h == cfg.input_height && w == cfg.input_width {
        if unit.len() != h * w {
            return Err(Error::Shape {
                expected: vec![h, w],
                actual: vec![unit.len()],
            });
        }
        return Ok(unit);
    }
    downsample_area(&unit, h, w, cfg.input_height, cfg.input_width)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            input_height: 8,
            input_width: 16,
            stem_width: 2,
            stage_widths: vec![2, 4],
            blocks_per_stage: vec![1, 1],
            ..Default::default()
        }
    }

    #[test]
    fn output_shape_and_stage_dims() {
        let model = Model::init(&NetworkConfig::default(), 1).unwrap();
        assert_eq!(model.layout().stage_dims(), vec![(8, 64, 256), (16, 32, 128), (32, 16, 64)]);
        let m = Model::init(&tiny(), 0).unwrap();
        let batch = Tensor::zeros(vec![3, 1, 8, 16]);
        assert_eq!(forward(&m, &batch).unwrap().shape(), &[3, 4]);
    }

    #[test]
    fn shape_mismatch_names_dims() {
        let m = Model::init(&tiny(), 0).unwrap();
        let err = forward(&m, &Tensor::zeros(vec![1, 1, 8, 15])).unwrap_err();
        assert!(matches!(err, Error::Shape { ref expected, .. } if expected == &vec![1, 1, 8, 16]));
    }

    #[test]
    fn zero_head_gives_uniform_softmax() {
        let mut m = Model::init(&tiny(), 3).unwrap();
        m.param_mut("fc.weight").unwrap().fill(0.0);
        let batch = Tensor::new(vec![1, 1, 8, 16], (0..128).map(|i| i as f64 / 128.0).collect()).unwrap();
        let logits = forward(&m, &batch).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let p = softmax(logits.data());
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let (loss, _) = loss_and_grad(&m, &batch, &[2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_bit_identical() {
        let m = Model::init(&tiny(), 5).unwrap();
        let img: Vec<f64> = (0..128).map(|i| ((i * 13) % 7) as f64 / 7.0).collect();
        let batch = Tensor::from_images(&[&img, &img], 8, 16).unwrap();
        let out = forward(&m, &batch).unwrap();
        assert_eq!(out.outer(0), out.outer(1));
    }

    #[test]
    fn confident_logits_have_small_loss() {
        assert!(cross_entropy(&[50.0, 0.0, 0.0, 0.0], 0) < 1e-20);
        assert!((cross_entropy(&[0.0; 4], 1) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, -3.0, 700.0, 2.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_tie_goes_low() {
        assert_eq!(class_from_logits(&[5.0, 1.0, 1.0, 1.0]), Class::Normal);
        assert_eq!(class_from_logits(&[1.0, 1.0, 1.0, 1.0]), Class::Normal);
        assert_eq!(class_from_logits(&[0.0, 2.0, 2.0, 1.0]), Class::Af);
    }

    #[test]
    fn invalid_label_rejected() {
        let m = Model::init(&tiny(), 0).unwrap();
        let batch = Tensor::zeros(vec![1, 1, 8, 16]);
        assert!(loss_and_grad(&m, &batch, &[4]).is_err());
        assert!(loss_and_grad(&m, &batch, &[0, 1]).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        assert!(Model::init(&NetworkConfig { classes: 3, ..tiny() }, 0).is_err());
        assert!(Model::init(&NetworkConfig { blocks_per_stage: vec![1, 0], ..tiny() }, 0).is_err());
    }

    #[test]
    fn area_downsample_averages_blocks() {
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let y = downsample_area(&x, 4, 4, 2, 2).unwrap();
        assert_eq!(y, vec![2.5, 4.5, 10.5, 12.5]);
        // non-integer ratio preserves the mean
        let z = downsample_area(&x, 4, 4, 3, 3).unwrap();
        let mean_x = x.iter().sum::<f64>() / 16.0;
        let mean_z = z.iter().sum::<f64>() / 9.0;
        assert!((mean_x - mean_z).abs() < 1e-12);
    }
}
