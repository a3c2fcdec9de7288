//! Synthetic multi-view scenes with a part that the input view cannot see.
//!
//! Each instance is a desk built from Gaussians: a top, an opaque front
//! panel and two back legs. View 0 looks at the panel from the front, so
//! the legs are hidden behind it; the other views circle the object and
//! see the legs from the side and back.

use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;
use crate::rasterizer::{render, RasterConfig, RasterError};
use crate::scene::{CameraPose, Gaussian3D, GaussianColor, GaussianMixture, SceneError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("need at least 4 views per instance, got {0}")]
    TooFewViews(usize),
    #[error("need at least one instance")]
    NoInstances,
    #[error("image size must be positive")]
    EmptyImage,
    #[error("hidden part of instance {instance} reaches alpha {alpha} in the input view")]
    Visible { instance: usize, alpha: f32 },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub instances: usize,
    pub views: usize,
    pub size: usize,
    pub seed: u64,
    /// Every `test_every`-th instance goes to the test split; 0 keeps all
    /// instances for training.
    pub test_every: usize,
    pub radius: f32,
    /// Focal length in units of the image width.
    pub focal: f32,
    pub znear: f32,
    pub zfar: f32,
}

impl DatasetConfig {
    pub fn new(instances: usize, views: usize, size: usize, seed: u64) -> Self {
        Self {
            instances,
            views,
            size,
            seed,
            test_every: 5,
            radius: 2.5,
            focal: 1.0,
            znear: 0.8,
            zfar: 4.2,
        }
    }

    pub fn is_test(&self, id: usize) -> bool {
        self.test_every > 0 && id % self.test_every == self.test_every - 1
    }
}

/// Ground truth of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub mixture: GaussianMixture,
    /// Indices of the Gaussians hidden from view 0.
    pub hidden: Range<usize>,
    pub extent: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub view: usize,
    /// `[H, W, 3]`
    pub image: Tensor<f32>,
    pub pose: CameraPose,
}

impl View {
    /// Camera center behind the object as seen from the input view.
    pub fn is_back(&self) -> bool {
        self.pose.center()[2] > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: usize,
    pub scene: SyntheticScene,
    pub views: Vec<View>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl Dataset {
    pub fn records(&self) -> usize {
        self.train.iter().chain(&self.test).map(|i| i.views.len()).sum()
    }

    pub fn extent(&self) -> f32 {
        1.0
    }
}

/// The designated input view of every instance.
pub const INPUT_VIEW: usize = 0;

pub fn generate(config: &DatasetConfig) -> Result<Dataset, DatasetError> {
    if config.views < 4 {
        return Err(DatasetError::TooFewViews(config.views));
    }
    if config.instances == 0 {
        return Err(DatasetError::NoInstances);
    }
    if config.size == 0 {
        return Err(DatasetError::EmptyImage);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for id in 0..config.instances {
        let inst = generate_instance(config, id)?;
        if config.is_test(id) {
            test.push(inst);
        } else {
            train.push(inst);
        }
    }
    Ok(Dataset {
        config: config.clone(),
        train,
        test,
    })
}

fn instance_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

pub fn generate_instance(config: &DatasetConfig, id: usize) -> Result<Instance, DatasetError> {
    let mut rng = instance_rng(config.seed, id);
    let scene = synth_desk(&mut rng)?;
    let poses = camera_ring(config, &mut rng)?;
    let alpha = hidden_alpha(&scene, &poses[INPUT_VIEW], config.size)?;
    if alpha >= 0.01 {
        return Err(DatasetError::Visible { instance: id, alpha });
    }
    let views = poses
        .into_iter()
        .enumerate()
        .map(|(view, pose)| {
            Ok(View {
                view,
                image: render_image(&scene.mixture, &pose, config.size)?,
                pose,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(Instance { id, scene, views })
}

/// `[S, S, 3]` render with the default rasterizer settings.
pub fn render_image(
    mixture: &GaussianMixture,
    pose: &CameraPose,
    size: usize,
) -> Result<Tensor<f32>, RasterError> {
    let out = render(mixture, pose, size, size, &RasterConfig::default())?;
    Ok(Tensor::from_parts(alloc::vec![size, size, 3], out.image))
}

/// Largest per-pixel contribution of the hidden part to the composite seen
/// from `pose`: the scene is rendered with the hidden Gaussians white and
/// everything else black.
pub fn hidden_alpha(scene: &SyntheticScene, pose: &CameraPose, size: usize) -> Result<f32, DatasetError> {
    let probe: Vec<Gaussian3D> = scene
        .mixture
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let c = if scene.hidden.contains(&i) { 1.0 } else { 0.0 };
            Gaussian3D::new(g.mean(), g.quat(), g.scale(), g.opacity(), GaussianColor::Rgb([c; 3]))
        })
        .collect::<Result<_, _>>()?;
    let out = render(
        &GaussianMixture::new(probe),
        pose,
        size,
        size,
        &RasterConfig::default(),
    )?;
    Ok(out.image.iter().copied().fold(0.0, f32::max))
}

/// View 0 sits in front of the panel; the rest are spread around the
/// object at random elevations.
pub fn camera_ring<R: Rng>(config: &DatasetConfig, rng: &mut R) -> Result<Vec<CameraPose>, SceneError> {
    let k = CameraPose::intrinsics_for(config.size, config.size, config.focal * config.size as f32);
    let tau = 2.0 * core::f32::consts::PI;
    (0..config.views)
        .map(|j| {
            let (az, el) = if j == INPUT_VIEW {
                (0.0, 10f32.to_radians())
            } else {
                let step = tau / config.views as f32;
                let az = step * j as f32 + rng.random_range(-0.2..0.2) * step;
                (az, rng.random_range(5f32..40.0).to_radians())
            };
            let (sa, ca) = (sin(az), cos(az));
            let (se, ce) = (sin(el), cos(el));
            let r = config.radius;
            let eye = [r * ce * sa, r * se, -r * ce * ca];
            CameraPose::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], k, config.znear, config.zfar)
        })
        .collect()
}

fn sin(x: f32) -> f32 {
    num_traits::Float::sin(x)
}

fn cos(x: f32) -> f32 {
    num_traits::Float::cos(x)
}

const SPACING: f32 = 0.08;
const SPREAD: f32 = 0.07;
const THICKNESS: f32 = 0.015;
const OPACITY: f32 = 0.95;
/// Top and panel are two layers thick so they block what is behind.
const LAYER_GAP: f32 = 0.03;
const LEG_COLOR: [f32; 3] = [0.2, 0.2, 0.22];

fn jitter<R: Rng>(rng: &mut R, c: [f32; 3]) -> [f32; 3] {
    c.map(|v| (v + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0))
}

fn random_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    [
        rng.random_range(0.15..0.95),
        rng.random_range(0.15..0.95),
        rng.random_range(0.15..0.95),
    ]
}

fn steps(lo: f32, hi: f32) -> impl Iterator<Item = f32> {
    let n = num_traits::Float::round((hi - lo) / SPACING) as usize;
    let step = (hi - lo) / n.max(1) as f32;
    (0..=n).map(move |i| lo + step * i as f32)
}

/// Desk centered at the origin: top, front panel and two back legs, all
/// within the unit sphere. Legs are dark metal and come last in the
/// mixture.
pub fn synth_desk<R: Rng>(rng: &mut R) -> Result<SyntheticScene, SceneError> {
    let w = rng.random_range(0.45f32..0.6);
    let d = rng.random_range(0.3f32..0.45);
    let top = rng.random_range(0.1f32..0.3);
    let bottom = -0.55f32;
    let top_color = random_color(rng);
    let panel_color = random_color(rng);
    let ident = [1.0, 0.0, 0.0, 0.0];
    let mut gs = Vec::new();
    for x in steps(-w, w) {
        for z in steps(-d, d) {
            for layer in [0.0, LAYER_GAP] {
                let c = jitter(rng, top_color);
                gs.push(Gaussian3D::new(
                    [x, top - layer, z],
                    ident,
                    [SPREAD, THICKNESS, SPREAD],
                    OPACITY,
                    GaussianColor::Rgb(c),
                )?);
            }
        }
        for y in steps(bottom, top) {
            for layer in [0.0, LAYER_GAP] {
                let c = jitter(rng, panel_color);
                gs.push(Gaussian3D::new(
                    [x, y, -d + layer],
                    ident,
                    [SPREAD, SPREAD, THICKNESS],
                    OPACITY,
                    GaussianColor::Rgb(c),
                )?);
            }
        }
    }
    let start = gs.len();
    let leg_r = rng.random_range(0.05f32..0.07);
    let inset = 0.1;
    for sx in [-1.0f32, 1.0] {
        for y in steps(bottom, top - 2.0 * SPACING) {
            let c = jitter(rng, LEG_COLOR);
            gs.push(Gaussian3D::new(
                [sx * (w - inset), y, d - inset],
                ident,
                [leg_r, SPREAD * 0.8, leg_r],
                OPACITY,
                GaussianColor::Rgb(c),
            )?);
        }
    }
    let hidden = start..gs.len();
    Ok(SyntheticScene {
        mixture: GaussianMixture::new(gs),
        hidden,
        extent: 1.0,
    })
}
