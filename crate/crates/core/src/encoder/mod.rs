//! Parent branch: a small U-Net feature extractor, a 1x1 regression head
//! with 24 channels per pixel, and the activation that turns those channels
//! into one world-space Gaussian per pixel.

mod lift;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::{concat, Bound, NumericsError, ParamSet, Real, Tensor, Var};

pub(crate) use lift::LOGIT_LIMIT;
pub use lift::{activate_and_lift, pixel_rays, LiftConfig, ParentMap, ACTIVATED_CHANNELS};

/// Raw head channels per pixel.
pub const RAW_CHANNELS: usize = 24;

/// Channel offsets of the raw head output.
pub mod layout {
    pub const DEPTH: usize = 0;
    pub const OFFSET: usize = 1;
    pub const QUAT: usize = 4;
    pub const SCALE: usize = 8;
    pub const OPACITY: usize = 11;
    pub const SH: usize = 12;
    pub const WIDTHS: [usize; 6] = [1, 3, 4, 3, 1, 12];
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("image {height}x{width} is not divisible by 2^{depth}")]
    Indivisible {
        height: usize,
        width: usize,
        depth: usize,
    },
    #[error("encoder needs depth >= 1 and feature width >= 1")]
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub feature_width: usize,
    /// Number of stride-2 stages.
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl EncoderConfig {
    pub fn new(
        feature_width: usize,
        depth: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, EncoderError> {
        if depth == 0 || feature_width == 0 || height == 0 || width == 0 {
            return Err(EncoderError::Degenerate);
        }
        let f = 1usize << depth;
        if height % f != 0 || width % f != 0 {
            return Err(EncoderError::Indivisible {
                height,
                width,
                depth,
            });
        }
        Ok(Self {
            feature_width,
            depth,
            height,
            width,
        })
    }

    fn level_width(&self, level: usize) -> usize {
        self.feature_width << level
    }

    /// Every 3x3 convolution as `(name, cin, cout, stride, output pixels)`.
    fn convs(&self) -> Vec<(String, usize, usize, usize, usize)> {
        let px = |level: usize| (self.height >> level) * (self.width >> level);
        let c = |l| self.level_width(l);
        let mut v = Vec::new();
        v.push((String::from("enc.in.0"), 3, c(0), 1, px(0)));
        v.push((String::from("enc.in.1"), c(0), c(0), 1, px(0)));
        for l in 1..=self.depth {
            v.push((format!("enc.down{l}.0"), c(l - 1), c(l), 2, px(l)));
            v.push((format!("enc.down{l}.1"), c(l), c(l), 1, px(l)));
        }
        for l in (0..self.depth).rev() {
            v.push((format!("enc.up{l}.0"), c(l + 1) + c(l), c(l), 1, px(l)));
            v.push((format!("enc.up{l}.1"), c(l), c(l), 1, px(l)));
        }
        v
    }

    /// Multiply-accumulates of one forward pass (backbone plus head).
    pub fn macs(&self) -> u64 {
        let conv: u64 = self
            .convs()
            .iter()
            .map(|(_, cin, cout, _, px)| (*px * 9 * cin * cout) as u64)
            .sum();
        conv + (self.height * self.width * self.feature_width * RAW_CHANNELS) as u64
    }

    pub fn param_count(&self) -> usize {
        let conv: usize = self
            .convs()
            .iter()
            .map(|(_, cin, cout, _, _)| 9 * cin * cout + cout)
            .sum();
        conv + self.feature_width * RAW_CHANNELS + RAW_CHANNELS
    }
}

/// Bias of the regression head, one value per raw channel.
pub fn head_bias(depth_logit: f32, log_scale: f32, opacity_logit: f32) -> [f32; RAW_CHANNELS] {
    let mut b = [0.0f32; RAW_CHANNELS];
    b[layout::DEPTH] = depth_logit;
    b[layout::QUAT] = 1.0;
    for s in 0..3 {
        b[layout::SCALE + s] = log_scale;
    }
    b[layout::OPACITY] = opacity_logit;
    b
}

/// He-initialized backbone, small random head weights and the given head
/// bias.
pub fn init_encoder_params<R: Rng>(
    cfg: &EncoderConfig,
    bias: &[f32; RAW_CHANNELS],
    rng: &mut R,
    params: &mut ParamSet,
) -> Result<(), NumericsError> {
    for (name, cin, cout, _, _) in cfg.convs() {
        let std = num_traits::Float::sqrt(2.0 / (9 * cin) as f32);
        params.insert(&format!("{name}.w"), normal(&[3, 3, cin, cout], std, rng))?;
        params.insert(&format!("{name}.b"), Tensor::zeros(&[cout]))?;
    }
    let c = cfg.feature_width;
    let std = 0.1 * num_traits::Float::sqrt(2.0 / c as f32);
    params.insert("head.w", normal(&[1, 1, c, RAW_CHANNELS], std, rng))?;
    params.insert("head.b", Tensor::from_slice(&[RAW_CHANNELS], bias)?)?;
    Ok(())
}

pub(crate) fn normal<R: Rng>(shape: &[usize], std: f32, rng: &mut R) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0f32, std).expect("finite std");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("positive shape")
}

fn conv<'t, T: Real>(
    p: &Bound<'t, T>,
    name: &str,
    x: Var<'t, T>,
    stride: usize,
    relu: bool,
) -> Result<Var<'t, T>, NumericsError> {
    let y = x.conv2d(
        p.get(&format!("{name}.w"))?,
        Some(p.get(&format!("{name}.b"))?),
        stride,
        1,
    )?;
    if relu {
        y.relu()
    } else {
        Ok(y)
    }
}

/// `[H, W, 3]` image to `[H, W, C]` features. The final convolution is
/// linear.
pub fn extract_features<'t, T: Real>(
    cfg: &EncoderConfig,
    p: &Bound<'t, T>,
    image: Var<'t, T>,
) -> Result<Var<'t, T>, NumericsError> {
    let shape = image.shape();
    if shape != [cfg.height, cfg.width, 3] {
        return Err(NumericsError::ShapeMismatch {
            op: "extract_features",
            lhs: shape,
            rhs: alloc::vec![cfg.height, cfg.width, 3],
        });
    }
    let x = conv(p, "enc.in.0", image, 1, true)?;
    let mut x = conv(p, "enc.in.1", x, 1, true)?;
    let mut skips = alloc::vec![x];
    for l in 1..=cfg.depth {
        x = conv(p, &format!("enc.down{l}.0"), x, 2, true)?;
        x = conv(p, &format!("enc.down{l}.1"), x, 1, true)?;
        skips.push(x);
    }
    for l in (0..cfg.depth).rev() {
        let up = x.upsample2x()?;
        x = concat(&[up, skips[l]], 2)?;
        x = conv(p, &format!("enc.up{l}.0"), x, 1, true)?;
        x = conv(p, &format!("enc.up{l}.1"), x, 1, l != 0)?;
    }
    Ok(x)
}

/// Per-pixel 1x1 head: `[H, W, C]` features to `[H, W, 24]` raw channels.
pub fn regress_parent_raw<'t, T: Real>(
    p: &Bound<'t, T>,
    features: Var<'t, T>,
) -> Result<Var<'t, T>, NumericsError> {
    features.conv2d(p.get("head.w")?, Some(p.get("head.b")?), 1, 0)
}
