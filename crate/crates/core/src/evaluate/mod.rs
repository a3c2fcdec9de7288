//! Image metrics and model accounting.

use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{NumericsError, Tensor};
use crate::trainer::ModelConfig;

fn same_shape(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn log10(x: f64) -> f64 {
    num_traits::Float::log10(x)
}

/// `10 log10(1 / MSE)` over all pixels and channels; identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64, NumericsError> {
    same_shape("psnr", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sum / a.len() as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * log10(mse)
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SsimError {
    #[error("image {height}x{width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")]
    TooSmall { height: usize, width: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = num_traits::Float::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter over every full window ("valid" placement).
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..SSIM_WINDOW).map(|i| k[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM over all full 11x11 Gaussian windows (sigma 1.5) and channels
/// of two `[H, W, C]` images on unit dynamic range.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64, SsimError> {
    same_shape("ssim", a, b)?;
    let s = a.shape();
    if s.len() != 3 {
        return Err(NumericsError::InvalidShape {
            shape: s.to_vec(),
            reason: "ssim expects [H, W, C]",
        }
        .into());
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(SsimError::TooSmall { height: h, width: w });
    }
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let k = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x: Vec<f64> = (0..h * w).map(|i| a.data()[i * c + ch] as f64).collect();
        let y: Vec<f64> = (0..h * w).map(|i| b.data()[i * c + ch] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-pixel squared error averaged over channels.
pub fn pixel_mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Vec<f64>, NumericsError> {
    same_shape("pixel_mse", a, b)?;
    let c = *a.shape().last().unwrap_or(&1);
    Ok(a.data()
        .chunks(c)
        .zip(b.data().chunks(c))
        .map(|(p, q)| {
            p.iter()
                .zip(q)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
                / c as f64
        })
        .collect())
}

/// Pixels whose error exceeds 10% of the largest pixel error in the image.
pub fn bad_pixel_mask(render: &Tensor<f32>, truth: &Tensor<f32>) -> Result<Vec<bool>, NumericsError> {
    let e = pixel_mse(render, truth)?;
    let max = e.iter().copied().fold(0.0, f64::max);
    Ok(e.iter().map(|&v| v > 0.1 * max).collect())
}

/// PSNR over the masked pixels only; `None` for an empty mask.
pub fn masked_psnr(render: &Tensor<f32>, truth: &Tensor<f32>, mask: &[bool]) -> Result<Option<f64>, NumericsError> {
    let e = pixel_mse(render, truth)?;
    let (sum, n) = e
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    Ok((n > 0).then(|| psnr_from_mse(sum / n as f64)))
}

/// Restricted PSNRs of one image pair against ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct BadPixelImage {
    pub mask_a: Vec<bool>,
    pub mask_b: Vec<bool>,
    /// A and B on A's bad pixels.
    pub a_on_a: Option<f64>,
    pub b_on_a: Option<f64>,
    /// A and B on B's bad pixels.
    pub a_on_b: Option<f64>,
    pub b_on_b: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BadPixelReport {
    pub images: Vec<BadPixelImage>,
    /// Means over images with non-empty masks, infinite values capped at
    /// 100 dB.
    pub a_on_a: f64,
    pub b_on_a: f64,
    pub a_on_b: f64,
    pub b_on_b: f64,
    pub empty_a: usize,
    pub empty_b: usize,
}

impl BadPixelReport {
    /// How much B beats A on the pixels A gets wrong.
    pub fn b_lead_on_a(&self) -> f64 {
        self.b_on_a - self.a_on_a
    }

    /// How much A beats B on the pixels B gets wrong.
    pub fn a_lead_on_b(&self) -> f64 {
        self.a_on_b - self.b_on_b
    }
}

fn mean_capped(v: impl Iterator<Item = Option<f64>>) -> f64 {
    let xs: Vec<f64> = v.flatten().map(|x| x.min(100.0)).collect();
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Two-way bad-pixel comparison with masks recomputed per image.
pub fn bad_pixel_analysis(
    renders_a: &[Tensor<f32>],
    renders_b: &[Tensor<f32>],
    truth: &[Tensor<f32>],
) -> Result<BadPixelReport, NumericsError> {
    if renders_a.len() != truth.len() || renders_b.len() != truth.len() {
        return Err(NumericsError::InvalidArgument("render and ground-truth counts differ"));
    }
    let mut images = Vec::with_capacity(truth.len());
    for ((a, b), t) in renders_a.iter().zip(renders_b).zip(truth) {
        let mask_a = bad_pixel_mask(a, t)?;
        let mask_b = bad_pixel_mask(b, t)?;
        images.push(BadPixelImage {
            a_on_a: masked_psnr(a, t, &mask_a)?,
            b_on_a: masked_psnr(b, t, &mask_a)?,
            a_on_b: masked_psnr(a, t, &mask_b)?,
            b_on_b: masked_psnr(b, t, &mask_b)?,
            mask_a,
            mask_b,
        });
    }
    Ok(BadPixelReport {
        a_on_a: mean_capped(images.iter().map(|i| i.a_on_a)),
        b_on_a: mean_capped(images.iter().map(|i| i.b_on_a)),
        a_on_b: mean_capped(images.iter().map(|i| i.a_on_b)),
        b_on_b: mean_capped(images.iter().map(|i| i.b_on_b)),
        empty_a: images.iter().filter(|i| i.a_on_a.is_none()).count(),
        empty_b: images.iter().filter(|i| i.b_on_b.is_none()).count(),
        images,
    })
}

/// Parameter and multiply-accumulate counts for one forward encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityReport {
    pub encoder_params: usize,
    pub child_params: usize,
    pub encoder_macs: u64,
    pub child_macs: u64,
}

impl ComplexityReport {
    pub fn total_params(&self) -> usize {
        self.encoder_params + self.child_params
    }

    pub fn total_macs(&self) -> u64 {
        self.encoder_macs + self.child_macs
    }

    /// Fraction of forward multiply-accumulates spent in the child heads.
    pub fn child_share(&self) -> f64 {
        self.child_macs as f64 / self.total_macs() as f64
    }
}

pub fn complexity_report(cfg: &ModelConfig) -> ComplexityReport {
    let (h, w) = cfg.size();
    let (child_params, child_macs) = if cfg.children {
        (cfg.hierarchy.param_count(), cfg.hierarchy.macs(h, w))
    } else {
        (0, 0)
    };
    ComplexityReport {
        encoder_params: cfg.encoder.param_count(),
        child_params,
        encoder_macs: cfg.encoder.macs(),
        child_macs,
    }
}
