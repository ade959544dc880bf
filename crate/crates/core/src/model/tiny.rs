//! Small U-shaped encoder-decoder for CPU-scale training.
//!
//! Encoder level `l` runs a 3x3 convolution with `base_width * 2^l` filters
//! followed by ReLU; levels are separated by 2x2 max pooling. Each decoder
//! level projects the coarser features with a 1x1 convolution, upsamples
//! them, adds the encoder features of the same resolution and applies a 3x3
//! convolution with ReLU. A final 1x1 convolution produces one logit per
//! output channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{self, Conv};
use crate::model::{SegmentationModel, Tensor};

pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TinyConfig {
    pub depth: usize,
    pub base_width: usize,
}

impl Default for TinyConfig {
    fn default() -> Self {
        TinyConfig {
            depth: 3,
            base_width: 16,
        }
    }
}

impl TinyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 6 {
            return Err(Error::ConfigError(format!("depth must be 1..=6, got {}", self.depth)));
        }
        if self.base_width == 0 || self.base_width > 256 {
            return Err(Error::ConfigError(format!(
                "base width must be 1..=256, got {}",
                self.base_width
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyEncoderDecoder {
    config: TinyConfig,
    out_channels: usize,
    encoders: Vec<Conv>,
    /// Indexed by the finer level they feed: `projections[l]` maps level
    /// `l + 1` features to level `l` width.
    projections: Vec<Conv>,
    decoders: Vec<Conv>,
    head: Conv,
    params: Vec<f32>,
}

/// Activations kept for the backward pass of one image.
pub struct TinyCache {
    h: usize,
    w: usize,
    enc_cols: Vec<Vec<f32>>,
    enc_out: Vec<Vec<f32>>,
    pool_arg: Vec<Vec<u32>>,
    proj_cols: Vec<Vec<f32>>,
    dec_cols: Vec<Vec<f32>>,
    dec_out: Vec<Vec<f32>>,
    head_cols: Vec<f32>,
}

impl TinyEncoderDecoder {
    /// All parameters zero: every logit is exactly zero.
    pub fn zeros(config: TinyConfig, out_channels: usize) -> Result<Self> {
        config.validate()?;
        if out_channels == 0 {
            return Err(Error::ConfigError("at least one output channel is required".into()));
        }
        let mut offset = 0;
        let mut encoders = Vec::new();
        for l in 0..config.depth {
            let input = if l == 0 { INPUT_CHANNELS } else { config.width(l - 1) };
            encoders.push(Conv::new(input, config.width(l), 3, &mut offset));
        }
        let mut projections = Vec::new();
        let mut decoders = Vec::new();
        for l in 0..config.depth.saturating_sub(1) {
            projections.push(Conv::new(config.width(l + 1), config.width(l), 1, &mut offset));
            decoders.push(Conv::new(config.width(l), config.width(l), 3, &mut offset));
        }
        let head = Conv::new(config.width(0), out_channels, 1, &mut offset);
        Ok(TinyEncoderDecoder {
            config,
            out_channels,
            encoders,
            projections,
            decoders,
            head,
            params: vec![0.0; offset],
        })
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn new(config: TinyConfig, out_channels: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config, out_channels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs: Vec<(Conv, f64)> = model
            .encoders
            .iter()
            .chain(&model.projections)
            .chain(&model.decoders)
            .map(|c| (*c, 6.0))
            .chain(std::iter::once((model.head, 3.0)))
            .collect();
        for (conv, gain) in convs {
            let bound = (gain / conv.fan_in() as f64).sqrt() as f32;
            let n = conv.out_channels * conv.fan_in();
            for p in &mut model.params[conv.weight_offset..conv.weight_offset + n] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> TinyConfig {
        self.config
    }

    /// Spatial sizes must be divisible by `2^(depth - 1)`.
    pub fn check_input(&self, channels: usize, h: usize, w: usize) -> Result<()> {
        let factor = 1usize << (self.config.depth - 1);
        if channels != INPUT_CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "expected {INPUT_CHANNELS} input channels, got {channels}"
            )));
        }
        if h == 0 || w == 0 || !h.is_multiple_of(factor) || !w.is_multiple_of(factor) {
            return Err(Error::ShapeMismatch(format!(
                "input {h}x{w} is not divisible by {factor} (depth {})",
                self.config.depth
            )));
        }
        Ok(())
    }

    fn run(&self, image: &[f32], h: usize, w: usize, keep: bool) -> (Vec<f32>, Option<TinyCache>) {
        let p = &self.params;
        let depth = self.config.depth;
        let mut cache = TinyCache {
            h,
            w,
            enc_cols: Vec::new(),
            enc_out: Vec::new(),
            pool_arg: Vec::new(),
            proj_cols: Vec::new(),
            dec_cols: Vec::new(),
            dec_out: Vec::new(),
            head_cols: Vec::new(),
        };

        let mut skips: Vec<Vec<f32>> = Vec::with_capacity(depth);
        let mut x = image.to_vec();
        let (mut lh, mut lw) = (h, w);
        for (l, conv) in self.encoders.iter().enumerate() {
            if l > 0 {
                let (pooled, arg) = layers::max_pool2(&x, conv.in_channels, lh, lw);
                lh /= 2;
                lw /= 2;
                x = pooled;
                if keep {
                    cache.pool_arg.push(arg);
                }
            }
            let cols = conv.im2col(&x, lh, lw);
            let mut out = conv.forward_cols(p, &cols, lh * lw);
            layers::relu_in_place(&mut out);
            if keep {
                cache.enc_cols.push(cols);
            }
            skips.push(out.clone());
            x = out;
        }

        for l in (0..depth - 1).rev() {
            let proj = &self.projections[l];
            let (ch, cw) = (h >> (l + 1), w >> (l + 1));
            let proj_out = proj.forward(p, &x, ch, cw);
            if keep {
                cache.proj_cols.push(x.clone());
            }
            let mut merged = layers::upsample2(&proj_out, proj.out_channels, ch, cw);
            for (m, s) in merged.iter_mut().zip(&skips[l]) {
                *m += s;
            }
            let dec = &self.decoders[l];
            let cols = dec.im2col(&merged, 2 * ch, 2 * cw);
            let mut out = dec.forward_cols(p, &cols, 4 * ch * cw);
            layers::relu_in_place(&mut out);
            if keep {
                cache.dec_cols.push(cols);
                cache.dec_out.push(out.clone());
            }
            x = out;
        }

        let logits = self.head.forward(p, &x, h, w);
        if keep {
            cache.head_cols = x;
            cache.enc_out = skips;
        }
        (logits, keep.then_some(cache))
    }
}

impl SegmentationModel for TinyEncoderDecoder {
    type Cache = TinyCache;

    fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn params(&self) -> &[f32] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn forward_one(&self, image: &Tensor) -> Result<Tensor> {
        self.check_input(image.channels, image.height, image.width)?;
        let (logits, _) = self.run(&image.data, image.height, image.width, false);
        Tensor::from_vec(1, self.out_channels, image.height, image.width, logits)
    }

    fn forward_train(&self, image: &Tensor) -> Result<(Tensor, TinyCache)> {
        self.check_input(image.channels, image.height, image.width)?;
        let (logits, cache) = self.run(&image.data, image.height, image.width, true);
        Ok((
            Tensor::from_vec(1, self.out_channels, image.height, image.width, logits)?,
            cache.expect("cache requested"),
        ))
    }

    fn backward(&self, cache: &TinyCache, grad_logits: &[f32]) -> Vec<f32> {
        let p = &self.params;
        let mut grads = vec![0.0f32; p.len()];
        let (h, w) = (cache.h, cache.w);
        let depth = self.config.depth;

        let mut g = self
            .head
            .backward(p, &cache.head_cols, grad_logits, h, w, &mut grads, true)
            .unwrap();

        // Gradients flowing into each encoder output through its skip.
        let mut skip_grads: Vec<Option<Vec<f32>>> = vec![None; depth];

        // decoder levels were cached coarse to fine; walk them fine to coarse
        for l in 0..depth - 1 {
            let i = depth - 2 - l;
            let (ch, cw) = (h >> (l + 1), w >> (l + 1));
            let dec = &self.decoders[l];
            layers::relu_backward(&cache.dec_out[i], &mut g);
            let g_merged = dec
                .backward(p, &cache.dec_cols[i], &g, 2 * ch, 2 * cw, &mut grads, true)
                .unwrap();
            let proj = &self.projections[l];
            let g_proj_out = layers::upsample2_backward(&g_merged, proj.out_channels, ch, cw);
            skip_grads[l] = Some(g_merged);
            g = proj
                .backward(p, &cache.proj_cols[i], &g_proj_out, ch, cw, &mut grads, true)
                .unwrap();
        }

        // `g` now holds the gradient at the deepest encoder output.
        let mut upstream = Some(g);
        for l in (0..depth).rev() {
            let conv = &self.encoders[l];
            let (lh, lw) = (h >> l, w >> l);
            let mut g_out = match (upstream.take(), skip_grads[l].take()) {
                (Some(mut a), Some(b)) => {
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += y;
                    }
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => vec![0.0; conv.out_channels * lh * lw],
            };
            layers::relu_backward(&cache.enc_out[l], &mut g_out);
            let g_in = conv.backward(p, &cache.enc_cols[l], &g_out, lh, lw, &mut grads, l > 0);
            if l > 0 {
                let g_in = g_in.unwrap();
                let prev_len = self.encoders[l - 1].out_channels * (h >> (l - 1)) * (w >> (l - 1));
                upstream = Some(layers::max_pool2_backward(&g_in, &cache.pool_arg[l - 1], prev_len));
            }
        }
        grads
    }
}
