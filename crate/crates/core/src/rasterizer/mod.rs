//! Differentiable EWA splatting of 3D Gaussians into an RGB image.
//!
//! Gaussians are projected to screen-space ellipses, globally sorted by
//! depth (ties by input index) and alpha-composited front to back. Two
//! forward paths share one per-pixel kernel: a naive loop that visits every
//! splat at every pixel, and a tiled path that bins splats into 16x16 tiles
//! using a bound that is conservative for the alpha threshold, so both paths
//! produce identical pixels. The backward pass replays the composite back to
//! front and returns gradients for every Gaussian parameter; the sort order
//! is treated as constant.

mod composite;
mod op;
mod project;

use alloc::vec::Vec;

use crate::linalg::{norm, sub};
use crate::numerics::{NumericsError, Real};
use crate::scene::{eval_sh_color, CameraPose, Gaussian3D, GaussianColor, GaussianMixture};

pub use op::{render_var, sh_color_var, RenderLoss, PACKED_WIDTH};
pub use project::CullReason;

use composite::Frame;
use project::{project_one, CameraContext};

#[derive(Clone, Debug, PartialEq)]
pub struct RasterConfig {
    pub background: [f32; 3],
    pub tile_size: usize,
    /// Added to the diagonal of every screen covariance, in pixels squared.
    pub low_pass: f32,
    pub alpha_max: f32,
    /// Contributions with `opacity * kernel` below this are skipped.
    pub alpha_min: f32,
    /// Compositing stops once transmittance drops below this.
    pub transmittance_min: f32,
    /// Centers further than this many half-extents from the image center
    /// are culled.
    pub frustum_margin: f32,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            tile_size: 16,
            low_pass: 0.3,
            alpha_max: 0.99,
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            frustum_margin: 1.3,
        }
    }
}

impl RasterConfig {
    /// Alpha threshold low enough that the truncated kernel is continuous
    /// for practical purposes. Finite-difference checks need this: at the
    /// default threshold a stencil can straddle a splat's cutoff boundary.
    pub fn untruncated() -> Self {
        Self {
            alpha_min: 1e-9,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RasterError {
    #[error("mixture is empty")]
    EmptyMixture,
    #[error("image size {0}x{1} must be positive")]
    EmptyImage(usize, usize),
    #[error("tile size must be positive")]
    ZeroTile,
    #[error("{what} has {got} values, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("gradient image has {got} values, expected {expected}")]
    GradientLength { got: usize, expected: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A Gaussian after projection to pixel space.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f32; 2],
    pub cov2d: [[f32; 2]; 2],
    pub depth: f32,
    pub color: [f32; 3],
    pub opacity: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    Visible(Splat2D),
    Culled(CullReason),
}

impl Projection {
    pub fn visible(&self) -> Option<&Splat2D> {
        match self {
            Projection::Visible(s) => Some(s),
            Projection::Culled(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderDiagnostics {
    /// Outside the depth range or the widened frustum, or below the alpha
    /// threshold everywhere.
    pub culled: usize,
    /// Screen covariance not invertible after regularization.
    pub degenerate: usize,
    pub rendered: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T: Real = f32> {
    pub width: usize,
    pub height: usize,
    /// Row-major `H x W x 3`.
    pub image: Vec<T>,
    /// Row-major `H x W`, equal to `1 - T_final`.
    pub alpha: Vec<T>,
    pub diagnostics: RenderDiagnostics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    Naive,
    Tiled,
}

/// Struct-of-arrays view of a mixture with colors already resolved for one
/// camera. Quaternions need not be normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatBatch<T: Real = f32> {
    pub means: Vec<T>,
    pub quats: Vec<T>,
    pub scales: Vec<T>,
    pub opacities: Vec<T>,
    pub colors: Vec<T>,
}

impl<T: Real> SplatBatch<T> {
    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    fn validate(&self) -> Result<(), RasterError> {
        let n = self.len();
        for (what, got, per) in [
            ("means", self.means.len(), 3),
            ("quats", self.quats.len(), 4),
            ("scales", self.scales.len(), 3),
            ("colors", self.colors.len(), 3),
        ] {
            if got != n * per {
                return Err(RasterError::Length {
                    what,
                    got,
                    expected: n * per,
                });
            }
        }
        Ok(())
    }
}

impl SplatBatch<f32> {
    /// SH colors are evaluated once per Gaussian along the ray from the
    /// camera center to its mean.
    pub fn from_mixture(mix: &GaussianMixture, cam: &CameraPose) -> Self {
        let n = mix.len();
        let mut b = SplatBatch {
            means: Vec::with_capacity(n * 3),
            quats: Vec::with_capacity(n * 4),
            scales: Vec::with_capacity(n * 3),
            opacities: Vec::with_capacity(n),
            colors: Vec::with_capacity(n * 3),
        };
        for g in &mix.gaussians {
            b.means.extend_from_slice(&g.mean());
            b.quats.extend_from_slice(&g.quat());
            b.scales.extend_from_slice(&g.scale());
            b.opacities.push(g.opacity());
            b.colors.extend_from_slice(&resolve_color(g, cam));
        }
        b
    }
}

fn resolve_color(g: &Gaussian3D, cam: &CameraPose) -> [f32; 3] {
    match g.color() {
        GaussianColor::Rgb(c) => *c,
        GaussianColor::Sh(coeffs) => {
            let v = sub(&g.mean(), &cam.center());
            let n = norm(&v);
            let dir = if n > 0.0 { v.map(|x| x / n) } else { [0.0, 0.0, 1.0] };
            eval_sh_color(coeffs, dir).unwrap_or([0.5; 3])
        }
    }
}

/// Screen-space footprint of one Gaussian, or why it was dropped.
pub fn project(
    g: &Gaussian3D,
    cam: &CameraPose,
    width: usize,
    height: usize,
    cfg: &RasterConfig,
) -> Projection {
    let ctx = CameraContext::<f32>::new(cam, width, height);
    match project_one(
        0,
        g.mean(),
        g.quat(),
        g.scale(),
        g.opacity(),
        resolve_color(g, cam),
        &ctx,
        cfg,
    ) {
        Ok(s) => Projection::Visible(Splat2D {
            mean2d: s.mean2d,
            cov2d: [[s.cov2d[0], s.cov2d[1]], [s.cov2d[1], s.cov2d[2]]],
            depth: s.depth,
            color: s.color,
            opacity: s.opacity,
        }),
        Err(r) => Projection::Culled(r),
    }
}

/// Tiled render of a mixture.
pub fn render(
    mix: &GaussianMixture,
    cam: &CameraPose,
    width: usize,
    height: usize,
    cfg: &RasterConfig,
) -> Result<RenderOutput, RasterError> {
    render_mixture(mix, cam, width, height, cfg, RenderMode::Tiled)
}

/// Reference render that tests every splat at every pixel.
pub fn render_naive(
    mix: &GaussianMixture,
    cam: &CameraPose,
    width: usize,
    height: usize,
    cfg: &RasterConfig,
) -> Result<RenderOutput, RasterError> {
    render_mixture(mix, cam, width, height, cfg, RenderMode::Naive)
}

fn render_mixture(
    mix: &GaussianMixture,
    cam: &CameraPose,
    width: usize,
    height: usize,
    cfg: &RasterConfig,
    mode: RenderMode,
) -> Result<RenderOutput, RasterError> {
    if mix.is_empty() {
        return Err(RasterError::EmptyMixture);
    }
    let batch = SplatBatch::from_mixture(mix, cam);
    Ok(render_batch(&batch, cam, width, height, cfg, mode)?.0)
}

/// Everything the backward pass needs from a forward render.
pub struct RenderTrace<T: Real = f32> {
    frame: Frame<T>,
    cam: CameraContext<T>,
}

/// Forward render of a batch in any precision; the trace feeds
/// [`render_backward`].
pub fn render_batch<T: Real>(
    batch: &SplatBatch<T>,
    cam: &CameraPose,
    width: usize,
    height: usize,
    cfg: &RasterConfig,
    mode: RenderMode,
) -> Result<(RenderOutput<T>, RenderTrace<T>), RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::EmptyImage(width, height));
    }
    if cfg.tile_size == 0 {
        return Err(RasterError::ZeroTile);
    }
    batch.validate()?;
    let ctx = CameraContext::new(cam, width, height);
    let mut diagnostics = RenderDiagnostics::default();
    let mut splats = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let m = &batch.means[i * 3..i * 3 + 3];
        let q = &batch.quats[i * 4..i * 4 + 4];
        let s = &batch.scales[i * 3..i * 3 + 3];
        let c = &batch.colors[i * 3..i * 3 + 3];
        match project_one(
            i,
            [m[0], m[1], m[2]],
            [q[0], q[1], q[2], q[3]],
            [s[0], s[1], s[2]],
            batch.opacities[i],
            [c[0], c[1], c[2]],
            &ctx,
            cfg,
        ) {
            Ok(sp) => splats.push(sp),
            Err(CullReason::Degenerate) => diagnostics.degenerate += 1,
            Err(_) => diagnostics.culled += 1,
        }
    }
    diagnostics.rendered = splats.len();
    let (frame, image, alpha) = Frame::forward(splats, width, height, cfg, mode);
    Ok((
        RenderOutput {
            width,
            height,
            image,
            alpha,
            diagnostics,
        },
        RenderTrace { frame, cam: ctx },
    ))
}

/// Per-parameter gradients in the same layout as [`SplatBatch`].
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGradients<T: Real = f32> {
    pub means: Vec<T>,
    pub quats: Vec<T>,
    pub scales: Vec<T>,
    pub opacities: Vec<T>,
    pub colors: Vec<T>,
}

/// Gradients of `sum(grad_image * image)` with respect to the batch that
/// produced `trace`. Culled splats get zeros.
pub fn render_backward<T: Real>(
    trace: &RenderTrace<T>,
    batch: &SplatBatch<T>,
    grad_image: &[T],
) -> Result<SplatGradients<T>, RasterError> {
    let expected = trace.frame.width * trace.frame.height * 3;
    if grad_image.len() != expected {
        return Err(RasterError::GradientLength {
            got: grad_image.len(),
            expected,
        });
    }
    batch.validate()?;
    Ok(trace.frame.backward(&trace.cam, &batch.quats, batch.len(), grad_image))
}
