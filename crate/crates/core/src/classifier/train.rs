use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, loss_grad_logits, Model, NetworkConfig, Tensor, TrainingMeta};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Rescale a batch gradient whose L2 norm exceeds this; `None` disables.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves the parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid(format!("clip_norm {c} must be positive")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the running model on the samples it saw this epoch.
    pub accuracy: f64,
}

pub fn train(images: &[Vec<f64>], labels: &[usize], net: &NetworkConfig, cfg: &TrainConfig) -> Result<Model> {
    train_with(images, labels, net, cfg, |_| {})
}

/// Momentum SGD over shuffled mini-batches; `on_epoch` sees each epoch's summary.
pub fn train_with(
    images: &[Vec<f64>],
    labels: &[usize],
    net: &NetworkConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Model> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if images.len() != labels.len() {
        return Err(Error::invalid(format!("{} images but {} labels", images.len(), labels.len())));
    }
    let pixels = net.input_height * net.input_width;
    if let Some(bad) = images.iter().position(|im| im.len() != pixels) {
        return Err(Error::Shape {
            expected: vec![net.input_height, net.input_width],
            actual: vec![images[bad].len()],
        });
    }

    let mut model = Model::init(net, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut velocity = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut last_loss = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&[f64]> = chunk.iter().map(|&i| images[i].as_slice()).collect();
            let batch = Tensor::from_images(&refs, net.input_height, net.input_width)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let diverged = |loss| Error::Divergence {
                epoch,
                batch: batch_idx,
                loss,
            };
            let (loss, grads, logits) = match loss_grad_logits(&model, &batch, &y) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            correct += y.iter().enumerate().filter(|&(b, &l)| argmax(&logits[b]) == l).count();
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(diverged(loss));
            }
            loss_sum += loss * chunk.len() as f64;
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            let shrink = match cfg.clip_norm {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            for ((p, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grads) {
                *v = cfg.momentum * *v + shrink * g;
                *p -= cfg.learning_rate * *v;
            }
        }
        let report = EpochReport {
            epoch,
            mean_loss: loss_sum / images.len() as f64,
            accuracy: correct as f64 / images.len() as f64,
        };
        last_loss = Some(report.mean_loss);
        on_epoch(&report);
    }
    model.set_meta(TrainingMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        final_loss: last_loss,
    });
    Ok(model)
}
