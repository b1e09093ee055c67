//! Residual network layout, forward pass and backpropagation.

use serde::{Deserialize, Serialize};

use super::layers::{
    conv_backward, conv_forward, norm_backward, norm_forward, relu, relu_backward, ConvShape,
    NormCache,
};
use crate::ingest::Class;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    None,
    /// Per-sample, per-channel normalization with learned scale and shift.
    Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Channels of the initial 3x3 convolution.
    pub stem_width: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub classes: usize,
    pub norm: NormKind,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_height: 64,
            input_width: 256,
            stem_width: 8,
            stage_widths: vec![8, 16, 32],
            blocks_per_stage: vec![2, 2, 2],
            classes: Class::COUNT,
            norm: NormKind::None,
        }
    }
}

impl NetworkConfig {
    /// The 34-layer stage plan (3, 4, 6, 3 blocks of 64..512 channels) on a
    /// 3x3 stem, with instance normalization in place of batch statistics.
    pub fn resnet34(input_height: usize, input_width: usize) -> Self {
        Self {
            input_height,
            input_width,
            stem_width: 64,
            stage_widths: vec![64, 128, 256, 512],
            blocks_per_stage: vec![3, 4, 6, 3],
            classes: Class::COUNT,
            norm: NormKind::Instance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes != Class::COUNT {
            return Err(Error::invalid(format!(
                "network must have {} classes, got {}",
                Class::COUNT,
                self.classes
            )));
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return Err(Error::invalid("stage widths and block counts must be nonempty and aligned"));
        }
        if self.blocks_per_stage.contains(&0)
            || self.stage_widths.contains(&0)
            || self.stem_width == 0
        {
            return Err(Error::invalid("every stage needs at least one block and one channel"));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::invalid("input dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Uniform init bound; zero means constant init at `fill`.
    #[serde(skip)]
    pub(crate) bound: f64,
    #[serde(skip)]
    pub(crate) fill: f64,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    shape: ConvShape,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    channels: usize,
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv,
    norm1: Option<Norm>,
    conv2: Conv,
    norm2: Option<Norm>,
    project: Option<(Conv, Option<Norm>)>,
}

/// Parameter offsets into one flat vector, fixed by the config.
#[derive(Debug, Clone)]
pub struct Layout {
    config: NetworkConfig,
    stem: Conv,
    stem_norm: Option<Norm>,
    blocks: Vec<Block>,
    fc_weight: usize,
    fc_bias: usize,
    features: usize,
    entries: Vec<ParamEntry>,
    total: usize,
}

struct Builder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, bound: f64, fill: f64) -> usize {
        let len = shape.iter().product();
        let offset = self.total;
        self.entries.push(ParamEntry {
            name,
            shape,
            offset,
            len,
            bound,
            fill,
        });
        self.total += len;
        offset
    }

    fn conv(&mut self, name: &str, shape: ConvShape, scale: f64) -> Conv {
        let bound = scale * (6.0 / shape.fan_in() as f64).sqrt();
        let k = shape.kernel;
        let weight = self.push(
            format!("{name}.weight"),
            vec![shape.out_c, shape.in_c, k, k],
            bound,
            0.0,
        );
        let bias = self.push(format!("{name}.bias"), vec![shape.out_c], 0.0, 0.0);
        Conv { shape, weight, bias }
    }

    fn norm(&mut self, name: &str, channels: usize, kind: NormKind) -> Option<Norm> {
        match kind {
            NormKind::None => None,
            NormKind::Instance => {
                let gamma = self.push(format!("{name}.gamma"), vec![channels], 0.0, 1.0);
                let beta = self.push(format!("{name}.beta"), vec![channels], 0.0, 0.0);
                Some(Norm {
                    channels,
                    gamma,
                    beta,
                })
            }
        }
    }
}

impl Layout {
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            entries: Vec::new(),
            total: 0,
        };
        let k3 = |in_c, out_c, stride| ConvShape {
            in_c,
            out_c,
            kernel: 3,
            stride,
            pad: 1,
        };
        let stem = b.conv("stem", k3(1, config.stem_width, 1), 1.0);
        let stem_norm = b.norm("stem.norm", config.stem_width, config.norm);

        let total_blocks: usize = config.blocks_per_stage.iter().sum();
        let branch_scale = 1.0 / (total_blocks as f64).sqrt();
        let mut blocks = Vec::with_capacity(total_blocks);
        let mut channels = config.stem_width;
        for (s, (&width, &count)) in config
            .stage_widths
            .iter()
            .zip(&config.blocks_per_stage)
            .enumerate()
        {
            for i in 0..count {
                let stride = if s > 0 && i == 0 { 2 } else { 1 };
                let name = format!("stage{}.block{}", s + 1, i + 1);
                let conv1 = b.conv(&format!("{name}.conv1"), k3(channels, width, stride), 1.0);
                let norm1 = b.norm(&format!("{name}.norm1"), width, config.norm);
                let conv2 = b.conv(&format!("{name}.conv2"), k3(width, width, 1), branch_scale);
                let norm2 = b.norm(&format!("{name}.norm2"), width, config.norm);
                let project = (stride != 1 || channels != width).then(|| {
                    let shape = ConvShape {
                        in_c: channels,
                        out_c: width,
                        kernel: 1,
                        stride,
                        pad: 0,
                    };
                    let conv = b.conv(&format!("{name}.project"), shape, 1.0);
                    let norm = b.norm(&format!("{name}.project.norm"), width, config.norm);
                    (conv, norm)
                });
                blocks.push(Block {
                    conv1,
                    norm1,
                    conv2,
                    norm2,
                    project,
                });
                channels = width;
            }
        }
        let fc_bound = (1.0 / channels as f64).sqrt();
        let fc_weight = b.push("fc.weight".into(), vec![config.classes, channels], fc_bound, 0.0);
        let fc_bias = b.push("fc.bias".into(), vec![config.classes], 0.0, 0.0);
        Ok(Self {
            config: config.clone(),
            stem,
            stem_norm,
            blocks,
            fc_weight,
            fc_bias,
            features: channels,
            entries: b.entries,
            total: b.total,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    /// Spatial size after each stage.
    pub fn stage_dims(&self) -> Vec<(usize, usize, usize)> {
        let mut h = self.config.input_height;
        let mut w = self.config.input_width;
        let mut out = Vec::new();
        let mut idx = 0;
        for &count in &self.config.blocks_per_stage {
            for _ in 0..count {
                let blk = &self.blocks[idx];
                let (nh, nw) = blk.conv1.shape.out_dims(h, w);
                h = nh;
                w = nw;
                idx += 1;
            }
            out.push((self.blocks[idx - 1].conv2.shape.out_c, h, w));
        }
        out
    }
}

fn slice(params: &[f64], offset: usize, len: usize) -> &[f64] {
    &params[offset..offset + len]
}

struct ConvNormCache {
    input: Vec<f64>,
    in_h: usize,
    in_w: usize,
    norm: Option<NormCache>,
}

struct BlockCache {
    c1: ConvNormCache,
    act1: Vec<f64>,
    c2: ConvNormCache,
    proj: Option<ConvNormCache>,
    out: Vec<f64>,
}

/// Activations retained for backprop of one sample.
pub(crate) struct SampleCache {
    stem: ConvNormCache,
    stem_out: Vec<f64>,
    blocks: Vec<BlockCache>,
    pooled: Vec<f64>,
    last_plane: usize,
}

fn check_finite(what: &'static str, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn conv_norm(
    conv: &Conv,
    norm: &Option<Norm>,
    params: &[f64],
    x: Vec<f64>,
    h: usize,
    w: usize,
) -> (Vec<f64>, ConvNormCache, usize, usize) {
    let s = &conv.shape;
    let y = conv_forward(
        s,
        &x,
        h,
        w,
        slice(params, conv.weight, s.weight_len()),
        slice(params, conv.bias, s.out_c),
    );
    let (oh, ow) = s.out_dims(h, w);
    let (y, cache) = match norm {
        Some(n) => {
            let (y, c) = norm_forward(
                &y,
                n.channels,
                slice(params, n.gamma, n.channels),
                slice(params, n.beta, n.channels),
            );
            (y, Some(c))
        }
        None => (y, None),
    };
    (
        y,
        ConvNormCache {
            input: x,
            in_h: h,
            in_w: w,
            norm: cache,
        },
        oh,
        ow,
    )
}

fn conv_norm_backward(
    conv: &Conv,
    norm: &Option<Norm>,
    params: &[f64],
    cache: &ConvNormCache,
    grad_out: Vec<f64>,
    grads: &mut [f64],
) -> Vec<f64> {
    let g = match (norm, &cache.norm) {
        (Some(n), Some(c)) => {
            let (head, tail) = grads.split_at_mut(n.beta);
            norm_backward(
                c,
                n.channels,
                slice(params, n.gamma, n.channels),
                &grad_out,
                &mut head[n.gamma..n.gamma + n.channels],
                &mut tail[..n.channels],
            )
        }
        _ => grad_out,
    };
    let s = &conv.shape;
    let (head, tail) = grads.split_at_mut(conv.bias);
    conv_backward(
        s,
        &cache.input,
        cache.in_h,
        cache.in_w,
        slice(params, conv.weight, s.weight_len()),
        &g,
        &mut head[conv.weight..conv.weight + s.weight_len()],
        &mut tail[..s.out_c],
    )
}

impl Layout {
    /// Logits for one `[H, W]` image.
    pub(crate) fn forward_sample(&self, params: &[f64], image: &[f64]) -> Result<(Vec<f64>, SampleCache)> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        let (mut x, stem_cache, mut h, mut w) =
            conv_norm(&self.stem, &self.stem_norm, params, image.to_vec(), h, w);
        relu(&mut x);
        check_finite("stem", &x)?;
        let stem_out = x.clone();

        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (mut a1, c1, mh, mw) = conv_norm(&blk.conv1, &blk.norm1, params, x.clone(), h, w);
            relu(&mut a1);
            let (mut y, c2, oh, ow) = conv_norm(&blk.conv2, &blk.norm2, params, a1.clone(), mh, mw);
            let proj = match &blk.project {
                Some((conv, norm)) => {
                    let (p, pc, _, _) = conv_norm(conv, norm, params, x, h, w);
                    for (o, s) in y.iter_mut().zip(&p) {
                        *o += s;
                    }
                    Some(pc)
                }
                None => {
                    for (o, s) in y.iter_mut().zip(&x) {
                        *o += s;
                    }
                    None
                }
            };
            relu(&mut y);
            check_finite("residual block", &y)?;
            caches.push(BlockCache {
                c1,
                act1: a1,
                c2,
                proj,
                out: y.clone(),
            });
            x = y;
            h = oh;
            w = ow;
        }

        let c = self.features;
        let plane = h * w;
        let pooled: Vec<f64> = (0..c)
            .map(|ch| x[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        let fw = slice(params, self.fc_weight, self.config.classes * c);
        let fb = slice(params, self.fc_bias, self.config.classes);
        let logits: Vec<f64> = (0..self.config.classes)
            .map(|k| fb[k] + fw[k * c..(k + 1) * c].iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        check_finite("classifier head", &logits)?;
        Ok((
            logits,
            SampleCache {
                stem: stem_cache,
                stem_out,
                blocks: caches,
                pooled,
                last_plane: plane,
            },
        ))
    }

    /// Parameter gradient for one sample given `dL/dlogits`.
    pub(crate) fn backward_sample(
        &self,
        params: &[f64],
        cache: &SampleCache,
        grad_logits: &[f64],
    ) -> Vec<f64> {
        let mut grads = vec![0.0; self.total];
        let c = self.features;
        let classes = self.config.classes;
        let fw = slice(params, self.fc_weight, classes * c);
        let mut grad_pooled = vec![0.0; c];
        for k in 0..classes {
            grads[self.fc_bias + k] += grad_logits[k];
            for ch in 0..c {
                grads[self.fc_weight + k * c + ch] += grad_logits[k] * cache.pooled[ch];
                grad_pooled[ch] += grad_logits[k] * fw[k * c + ch];
            }
        }
        let plane = cache.last_plane;
        let mut g: Vec<f64> = grad_pooled
            .iter()
            .flat_map(|&gp| std::iter::repeat(gp / plane as f64).take(plane))
            .collect();

        for (blk, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            relu_backward(&bc.out, &mut g);
            let g_skip = match (&blk.project, &bc.proj) {
                (Some((conv, norm)), Some(pc)) => {
                    conv_norm_backward(conv, norm, params, pc, g.clone(), &mut grads)
                }
                _ => g.clone(),
            };
            let mut g_mid = conv_norm_backward(&blk.conv2, &blk.norm2, params, &bc.c2, g, &mut grads);
            relu_backward(&bc.act1, &mut g_mid);
            let mut g_in = conv_norm_backward(&blk.conv1, &blk.norm1, params, &bc.c1, g_mid, &mut grads);
            for (a, b) in g_in.iter_mut().zip(&g_skip) {
                *a += b;
            }
            g = g_in;
        }

        relu_backward(&cache.stem_out, &mut g);
        conv_norm_backward(&self.stem, &self.stem_norm, params, &cache.stem, g, &mut grads);
        grads
    }
}
