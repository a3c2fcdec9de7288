use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{
    activate_and_lift, extract_features, head_bias, init_encoder_params, regress_parent_raw, EncoderConfig,
    LiftConfig, ParentMap,
};
use crate::hierarchy::{build_condition, init_child_heads, predict_children, ChildInit, HierarchyConfig};
use crate::numerics::{concat, Bound, NumericsError, ParamSet, Real, Tape, Tensor, Var};
use crate::rasterizer::{render_var, sh_color_var, RasterConfig};
use crate::scene::{CameraPose, Gaussian3D, GaussianColor, SceneError};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub lift: LiftConfig,
    pub hierarchy: HierarchyConfig,
    /// `false` disables the child branch entirely (parent-only baseline).
    pub children: bool,
    pub raster: RasterConfig,
}

impl ModelConfig {
    /// Square images of side `size`, feature width 32, two down-sampling
    /// stages, unit scene extent, 8x8 raster tiles.
    pub fn desk(size: usize) -> Result<Self, crate::encoder::EncoderError> {
        Ok(Self {
            encoder: EncoderConfig::new(32, 2, size, size)?,
            lift: LiftConfig::new(1.0),
            hierarchy: HierarchyConfig::default(),
            children: true,
            raster: RasterConfig {
                tile_size: 8,
                ..RasterConfig::default()
            },
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.encoder.height, self.encoder.width)
    }
}

/// Parameter tensors are named `enc.*` and `head.*` for the parent branch
/// and `child.*` for the four child heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

pub fn is_child_param(name: &str) -> bool {
    name.starts_with("child.")
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, NumericsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (h, _) = config.size();
        let pixel_scale = 2.0 * config.lift.extent / h as f32;
        let bias = head_bias(0.0, num_traits::Float::ln(pixel_scale), -2.0);
        init_encoder_params(&config.encoder, &bias, &mut rng, &mut params)?;
        let init = ChildInit::Faint {
            opacity: config.hierarchy.init_opacity,
            scale: pixel_scale / 2.0,
        };
        if config.children {
            init_child_heads(&config.hierarchy, init, &mut rng, &mut params)?;
        }
        Ok(Self { config, params })
    }

    pub fn parent_param_count(&self) -> usize {
        self.params.count("") - self.child_param_count()
    }

    pub fn child_param_count(&self) -> usize {
        self.params.count("child.")
    }

    /// Inference render of `target_cam` from one input image.
    pub fn render(
        &self,
        image: &Tensor<f32>,
        input_cam: &CameraPose,
        target_cam: &CameraPose,
        with_children: bool,
    ) -> Result<Tensor<f32>, NumericsError> {
        let tape = Tape::<f32>::new();
        let p = self.params.bind(&tape, |_| false);
        let parent = encode(&self.config, &p, image, input_cam)?;
        let out = render_target(&self.config, &p, &parent, input_cam, target_cam, with_children)?;
        Ok((*out.value()).clone())
    }

    /// Every Gaussian the model emits for one input and target camera,
    /// parents first; children carry plain RGB.
    pub fn gaussians(
        &self,
        image: &Tensor<f32>,
        input_cam: &CameraPose,
        target_cam: &CameraPose,
        with_children: bool,
    ) -> Result<(Vec<Gaussian3D>, Vec<Gaussian3D>), ModelGaussianError> {
        let tape = Tape::<f32>::new();
        let p = self.params.bind(&tape, |_| false);
        let parent = encode(&self.config, &p, image, input_cam)?;
        let parents = parent.to_gaussians()?;
        let mut children = Vec::new();
        if with_children && self.config.children {
            let cond = build_condition(
                &parent,
                input_cam,
                target_cam,
                self.config.hierarchy.mode,
                self.config.hierarchy.eps,
            )?;
            let c = predict_children(&cond, &p, &parent, &self.config.hierarchy, &self.config.lift)?;
            let (m, q, s, o, rgb) = (
                c.means.value(),
                c.quats.value(),
                c.scales.value(),
                c.opacities.value(),
                c.colors.value(),
            );
            for i in 0..o.len() {
                children.push(Gaussian3D::new(
                    core::array::from_fn(|k| m.data()[i * 3 + k]),
                    core::array::from_fn(|k| q.data()[i * 4 + k]),
                    core::array::from_fn(|k| s.data()[i * 3 + k]),
                    o.data()[i],
                    GaussianColor::Rgb(core::array::from_fn(|k| rgb.data()[i * 3 + k])),
                )?);
            }
        }
        Ok((parents, children))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelGaussianError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Parent branch on a tape: features, raw head output, activation.
pub fn encode<'t, T: Real>(
    cfg: &ModelConfig,
    p: &Bound<'t, T>,
    image: &Tensor<f32>,
    input_cam: &CameraPose,
) -> Result<ParentMap<'t, T>, NumericsError> {
    let tape = p.get("head.w")?.tape();
    let x = tape.constant(image.cast());
    let features = extract_features(&cfg.encoder, p, x)?;
    let raw = regress_parent_raw(p, features)?;
    activate_and_lift(raw, input_cam, &cfg.lift)
}

/// `[H, W, 3]` render of `target_cam`: parents with SH colors seen from the
/// target, then (optionally) their children.
pub fn render_target<'t, T: Real>(
    cfg: &ModelConfig,
    p: &Bound<'t, T>,
    parent: &ParentMap<'t, T>,
    input_cam: &CameraPose,
    target_cam: &CameraPose,
    with_children: bool,
) -> Result<Var<'t, T>, NumericsError> {
    let parent_colors = sh_color_var(parent.sh, parent.mean_world, target_cam.center())?;
    let (h, w) = cfg.size();
    let (means, quats, scales, opacities, colors) = if with_children && cfg.children {
        let hc = &cfg.hierarchy;
        let cond = build_condition(parent, input_cam, target_cam, hc.mode, hc.eps)?;
        let c = predict_children(&cond, p, parent, hc, &cfg.lift)?;
        (
            concat(&[parent.mean_world, c.means], 0)?,
            concat(&[parent.quat_world, c.quats], 0)?,
            concat(&[parent.scale, c.scales], 0)?,
            concat(&[parent.opacity, c.opacities], 0)?,
            concat(&[parent_colors, c.colors], 0)?,
        )
    } else {
        (
            parent.mean_world,
            parent.quat_world,
            parent.scale,
            parent.opacity,
            parent_colors,
        )
    };
    Ok(render_var(
        means, quats, scales, opacities, colors, target_cam, w, h, &cfg.raster,
    )?)
}
