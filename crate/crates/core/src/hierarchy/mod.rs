//! View-conditioned child Gaussians.
//!
//! Every parent pixel gets `k` children from four small MLPs shared across
//! pixels. Their input is the 28-channel condition map: the 24 activated
//! parent parameters, the distance from the parent mean to the target
//! camera center, and the direction between them.

use alloc::format;
use alloc::vec;
use core::str::FromStr;

use rand::Rng;

use crate::encoder::{normal, ParentMap, ACTIVATED_CHANNELS, LiftConfig};
use crate::numerics::{concat, Bound, NumericsError, ParamSet, Real, Tensor, Var};
use crate::scene::CameraPose;

pub const CONDITION_CHANNELS: usize = ACTIVATED_CHANNELS + 1 + 3;

/// Per-child output widths of the offset, covariance, color and opacity
/// heads.
pub const HEAD_OUTPUTS: [(&str, usize); 4] = [("offset", 3), ("cov", 7), ("color", 3), ("opacity", 1)];

/// Total per-child output width, `3 + 7 + 3 + 1`.
pub const CHILD_WIDTH: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraMode {
    /// Target camera center in world coordinates.
    World,
    /// Target center and parent parameters in the input camera frame.
    Relative,
    /// No target information: distance and direction channels are zero.
    None,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unknown camera mode `{0}` (expected world, relative or none)")]
pub struct UnknownMode(pub alloc::string::String);

impl FromStr for CameraMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "world" => Ok(CameraMode::World),
            "relative" => Ok(CameraMode::Relative),
            "none" => Ok(CameraMode::None),
            other => Err(UnknownMode(other.into())),
        }
    }
}

impl core::fmt::Display for CameraMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            CameraMode::World => "world",
            CameraMode::Relative => "relative",
            CameraMode::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyConfig {
    /// Children per parent.
    pub k: usize,
    pub hidden: usize,
    pub eps: f64,
    pub mode: CameraMode,
    /// Optional per-component bound on child offsets, in units of the
    /// scene extent.
    pub offset_cap: Option<f32>,
    /// Opacity of freshly initialised children.
    pub init_opacity: f32,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            k: 3,
            hidden: 24,
            eps: 1e-8,
            mode: CameraMode::World,
            offset_cap: None,
            init_opacity: 0.1,
        }
    }
}

impl HierarchyConfig {
    pub fn param_count(&self) -> usize {
        HEAD_OUTPUTS
            .iter()
            .map(|(_, out)| {
                CONDITION_CHANNELS * self.hidden + self.hidden + self.hidden * self.k * out + self.k * out
            })
            .sum()
    }

    /// Multiply-accumulates of all heads for one `height x width` view.
    pub fn macs(&self, height: usize, width: usize) -> u64 {
        let per_pixel: usize = HEAD_OUTPUTS
            .iter()
            .map(|(_, out)| CONDITION_CHANNELS * self.hidden + self.hidden * self.k * out)
            .sum();
        (per_pixel * height * width) as u64
    }
}

/// Final-layer bias of the child heads.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChildInit {
    /// All final-layer weights and biases zero.
    Zero,
    /// Zero final weights; biases give faint children of the given opacity
    /// and scale sitting on their parents.
    Faint { opacity: f32, scale: f32 },
}

/// Adds `child.{head}.{w1,b1,w2,b2}` for the four heads.
pub fn init_child_heads<R: Rng>(
    cfg: &HierarchyConfig,
    init: ChildInit,
    rng: &mut R,
    params: &mut ParamSet,
) -> Result<(), NumericsError> {
    let std = num_traits::Float::sqrt(2.0 / CONDITION_CHANNELS as f32);
    for (name, out) in HEAD_OUTPUTS {
        let width = cfg.k * out;
        params.insert(
            &format!("child.{name}.w1"),
            normal(&[CONDITION_CHANNELS, cfg.hidden], std, rng),
        )?;
        params.insert(&format!("child.{name}.b1"), Tensor::zeros(&[cfg.hidden]))?;
        params.insert(&format!("child.{name}.w2"), Tensor::zeros(&[cfg.hidden, width]))?;
        let mut b2 = vec![0.0f32; width];
        if let ChildInit::Faint { opacity, scale } = init {
            for j in 0..cfg.k {
                match name {
                    "opacity" => b2[j] = logit(opacity),
                    "cov" => {
                        b2[j * 7] = 1.0;
                        for s in 0..3 {
                            b2[j * 7 + 4 + s] = num_traits::Float::ln(scale);
                        }
                    }
                    _ => {}
                }
            }
        }
        params.insert(&format!("child.{name}.b2"), Tensor::new(&[width], b2)?)?;
    }
    Ok(())
}

fn logit(p: f32) -> f32 {
    num_traits::Float::ln(p / (1.0 - p))
}

fn point_tensor<T: Real>(p: [f64; 3]) -> Tensor<T> {
    Tensor::new(&[1, 3], p.iter().map(|&v| T::of(v)).collect()).expect("3 values")
}

/// `[N, 1]` distances `|mu_i - l|`.
pub fn distance_map<'t, T: Real>(mu: Var<'t, T>, l: [f64; 3]) -> Result<Var<'t, T>, NumericsError> {
    mu.sub(mu.tape().constant(point_tensor(l)))?.l2norm_last()
}

/// `[N, 3]` directions `(mu_i - l) / (|mu_i - l| + eps)`.
pub fn direction_map<'t, T: Real>(
    mu: Var<'t, T>,
    l: [f64; 3],
    eps: f64,
) -> Result<Var<'t, T>, NumericsError> {
    let d = mu.sub(mu.tape().constant(point_tensor(l)))?;
    d.div(d.l2norm_last()?.add_scalar(T::of(eps))?)
}

/// `[N, 28]` condition map: activated parent parameters, distance,
/// direction.
pub struct ConditionMap<'t, T: Real> {
    pub tensor: Var<'t, T>,
    pub eps: f64,
}

fn world_to_camera64(cam: &CameraPose, p: [f32; 3]) -> [f64; 3] {
    let r = cam.rotation();
    let t = cam.translation();
    core::array::from_fn(|i| {
        r[i][0] as f64 * p[0] as f64 + r[i][1] as f64 * p[1] as f64 + r[i][2] as f64 * p[2] as f64
            + t[i] as f64
    })
}

pub fn build_condition<'t, T: Real>(
    parent: &ParentMap<'t, T>,
    input_cam: &CameraPose,
    target_cam: &CameraPose,
    mode: CameraMode,
    eps: f64,
) -> Result<ConditionMap<'t, T>, NumericsError> {
    let tensor = match mode {
        CameraMode::World => {
            let l = target_cam.center().map(|v| v as f64);
            concat(
                &[
                    parent.activated_world()?,
                    distance_map(parent.mean_world, l)?,
                    direction_map(parent.mean_world, l, eps)?,
                ],
                1,
            )?
        }
        CameraMode::Relative => {
            let l = world_to_camera64(input_cam, target_cam.center());
            concat(
                &[
                    parent.activated_camera()?,
                    distance_map(parent.mean_cam, l)?,
                    direction_map(parent.mean_cam, l, eps)?,
                ],
                1,
            )?
        }
        CameraMode::None => {
            let zeros = parent
                .mean_world
                .tape()
                .constant(Tensor::zeros(&[parent.len(), 4]));
            concat(&[parent.activated_world()?, zeros], 1)?
        }
    };
    Ok(ConditionMap { tensor, eps })
}

/// Child Gaussians in world space, `k` consecutive rows per parent pixel.
pub struct Children<'t, T: Real> {
    pub means: Var<'t, T>,
    pub quats: Var<'t, T>,
    pub scales: Var<'t, T>,
    pub opacities: Var<'t, T>,
    pub colors: Var<'t, T>,
}

fn mlp<'t, T: Real>(
    p: &Bound<'t, T>,
    head: &str,
    x: Var<'t, T>,
) -> Result<Var<'t, T>, NumericsError> {
    let h = x
        .matmul(p.get(&format!("child.{head}.w1"))?)?
        .add(p.get(&format!("child.{head}.b1"))?)?
        .relu()?;
    h.matmul(p.get(&format!("child.{head}.w2"))?)?
        .add(p.get(&format!("child.{head}.b2"))?)
}

pub fn predict_children<'t, T: Real>(
    cond: &ConditionMap<'t, T>,
    p: &Bound<'t, T>,
    parent: &ParentMap<'t, T>,
    cfg: &HierarchyConfig,
    lift: &LiftConfig,
) -> Result<Children<'t, T>, NumericsError> {
    let n = parent.len();
    let k = cfg.k;
    let rows = n * k;
    let x = cond.tensor;
    let mut offset = mlp(p, "offset", x)?.reshape(&[rows, 3])?;
    if let Some(cap) = cfg.offset_cap {
        let c = T::of((cap * lift.extent) as f64);
        offset = offset.clamp(-c, c)?;
    }
    let anchor = parent
        .mean_world
        .reshape(&[n, 1, 3])?
        .broadcast_to(&[n, k, 3])?
        .reshape(&[rows, 3])?;
    let means = anchor.add(offset)?;

    let cov = mlp(p, "cov", x)?.reshape(&[rows, 7])?;
    let q = cov.channels(0, 4)?;
    let quats = q.div(q.l2norm_last()?.add_scalar(T::of(1e-12))?)?;
    let (lo, hi) = lift.log_scale_range();
    let scales = cov.channels(4, 3)?.clamp(T::of(lo), T::of(hi))?.exp()?;

    let colors = mlp(p, "color", x)?.reshape(&[rows, 3])?.sigmoid()?;
    let lim = T::of(crate::encoder::LOGIT_LIMIT);
    let opacities = mlp(p, "opacity", x)?
        .reshape(&[rows, 1])?
        .clamp(-lim, lim)?
        .sigmoid()?;
    Ok(Children {
        means,
        quats,
        scales,
        opacities,
        colors,
    })
}
