//! Two-branch convolutional encoder: one stem per modality, then a trunk of
//! convolution blocks shared by both modalities.
//!
//! ```text
//! rgb  H×W×3 ─ stem_rgb ─┐
//!                        ├─ trunk[0] (stride 2) ─ trunk[1] (stride 2) ─ trunk[2] (stride 1) ─ H/4×W/4×D
//! ir   H×W×1 ─ stem_ir ──┘
//! ```
//!
//! Every convolution uses same padding and is followed by a ReLU. There is no
//! normalization layer.

use rand::Rng;

use crate::autodiff::{Graph, Padding, PoolMode, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Layer, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};
use crate::Modality;

pub const RGB_CHANNELS: usize = 3;
pub const IR_CHANNELS: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub img_h: usize,
    pub img_w: usize,
    pub stem_channels: usize,
    pub trunk_channels: usize,
    /// Channel depth `D` of the global feature map.
    pub out_d: usize,
    /// Embedding dimension `d`.
    pub embed_dim: usize,
    pub trunk_strides: [usize; 3],
    pub kernel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            img_h: 96,
            img_w: 32,
            stem_channels: 8,
            trunk_channels: 16,
            out_d: 64,
            embed_dim: 128,
            trunk_strides: [2, 2, 1],
            kernel: 3,
        }
    }
}

impl EncoderConfig {
    /// Small enough for exhaustive finite-difference checks: 24×4 images
    /// encode to a 6×1×8 map.
    pub fn tiny() -> Self {
        Self {
            img_h: 24,
            img_w: 4,
            stem_channels: 3,
            trunk_channels: 4,
            out_d: 8,
            embed_dim: 8,
            trunk_strides: [2, 2, 1],
            kernel: 3,
        }
    }

    fn downsample(&self, extent: usize) -> usize {
        self.trunk_strides.iter().fold(extent, |e, &s| e.div_ceil(s))
    }

    pub fn out_h(&self) -> usize {
        self.downsample(self.img_h)
    }

    pub fn out_w(&self) -> usize {
        self.downsample(self.img_w)
    }

    pub fn channels(modality: Modality) -> usize {
        match modality {
            Modality::Rgb => RGB_CHANNELS,
            Modality::Ir => IR_CHANNELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.img_h,
            self.img_w,
            self.stem_channels,
            self.trunk_channels,
            self.out_d,
            self.embed_dim,
        ];
        if positive.contains(&0) || self.trunk_strides.contains(&0) {
            return Err(Error::InvalidConfig("encoder extents must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "encoder kernel must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub stem_rgb: Layer,
    pub stem_ir: Layer,
    pub trunk: Vec<Layer>,
    /// Projection weights `[out_d, d]`; the embedding has no bias.
    pub embed: ParamId,
}

impl EncoderParams {
    pub fn register(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let k = cfg.kernel;
        let stem_rgb = Layer::conv(store, "stem.rgb", k, RGB_CHANNELS, cfg.stem_channels, rng);
        let stem_ir = Layer::conv(store, "stem.ir", k, IR_CHANNELS, cfg.stem_channels, rng);
        let widths = [
            cfg.stem_channels,
            cfg.trunk_channels,
            cfg.trunk_channels,
            cfg.out_d,
        ];
        let trunk = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::conv(store, &format!("trunk.{i}"), k, w[0], w[1], rng))
            .collect();
        let embed = store.add_uniform("embed.w", &[cfg.out_d, cfg.embed_dim], cfg.out_d, rng);
        Self {
            stem_rgb,
            stem_ir,
            trunk,
            embed,
        }
    }

    pub fn stem(&self, modality: Modality) -> Layer {
        match modality {
            Modality::Rgb => self.stem_rgb,
            Modality::Ir => self.stem_ir,
        }
    }
}

/// Modality-specific stem: `[N, H, W, C] -> [N, H, W, stem_channels]`.
pub fn stem<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    params: &EncoderParams,
    images: Var,
    modality: Modality,
) -> Result<Var> {
    let shape = g.shape(images);
    let expected = EncoderConfig::channels(modality);
    if shape.len() != 4 || shape[3] != expected {
        return Err(Error::InvalidInput(format!(
            "{modality} images need {expected} channel(s), got shape {shape:?}"
        )));
    }
    let (w, b) = params.stem(modality).vars(bound);
    let x = g.conv2d(images, w, b, Padding::Same, 1)?;
    Ok(g.relu(x))
}

/// Shared trunk applied to stem outputs of either modality.
pub fn trunk<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    mut x: Var,
) -> Result<Var> {
    for (layer, &stride) in params.trunk.iter().zip(&cfg.trunk_strides) {
        let (w, b) = layer.vars(bound);
        x = g.conv2d(x, w, b, Padding::Same, stride)?;
        x = g.relu(x);
    }
    Ok(x)
}

/// Images of one modality to the `[N, out_h, out_w, out_d]` global feature map.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    images: Var,
    modality: Modality,
) -> Result<Var> {
    let x = stem(g, bound, params, images, modality)?;
    trunk(g, bound, params, cfg, x)
}

/// Spatial average pooling followed by the dense projection to `R^d`.
pub fn embed<T: Scalar>(g: &mut Graph<T>, bound: &Bound, params: &EncoderParams, global: Var) -> Result<Var> {
    let pooled = g.pool_spatial(global, PoolMode::Avg)?;
    let n = g.shape(pooled)[0];
    let d = g.shape(pooled)[3];
    let flat = g.reshape(pooled, &[n, d])?;
    let w = bound[params.embed];
    let zero = g.leaf(Tensor::zeros(&[g.shape(w)[1]]));
    g.dense(flat, w, zero)
}
