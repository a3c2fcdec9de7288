use alloc::vec::Vec;

use crate::linalg::{inverse3, mat_vec, transpose};
use crate::numerics::{concat, NumericsError, Real, Tensor, Var};
use crate::scene::{rotmat_to_quat, CameraPose, Gaussian3D, GaussianColor, SceneError};

use super::{layout, RAW_CHANNELS};

/// Channels of the activated parent parameters fed to the child heads:
/// depth, mean, quaternion, scale, opacity, SH.
pub const ACTIVATED_CHANNELS: usize = 24;

/// Logits are clamped to this magnitude before a sigmoid so the result
/// stays strictly inside `(0, 1)` in `f32`.
pub(crate) const LOGIT_LIMIT: f64 = 13.8;

#[derive(Clone, Debug, PartialEq)]
pub struct LiftConfig {
    /// Scene bounding radius; upper clamp for scales.
    pub extent: f32,
    pub min_scale: f32,
}

impl LiftConfig {
    pub fn new(extent: f32) -> Self {
        Self {
            extent,
            min_scale: 1e-4,
        }
    }

    pub(crate) fn log_scale_range(&self) -> (f64, f64) {
        (
            num_traits::Float::ln(self.min_scale as f64),
            num_traits::Float::ln(self.extent as f64),
        )
    }
}

/// One activated parent Gaussian per pixel, rows in raster order.
pub struct ParentMap<'t, T: Real> {
    pub height: usize,
    pub width: usize,
    /// `[H*W, 24]` head output.
    pub raw: Var<'t, T>,
    /// `[H*W, 1]` depth along the pixel ray, inside `(znear, zfar)`.
    pub depth: Var<'t, T>,
    /// `[H*W, 3]` means in the input camera frame.
    pub mean_cam: Var<'t, T>,
    /// `[H*W, 3]` means in world coordinates.
    pub mean_world: Var<'t, T>,
    /// `[H*W, 4]` unit quaternions in the input camera frame.
    pub quat_cam: Var<'t, T>,
    pub quat_world: Var<'t, T>,
    /// `[H*W, 3]`
    pub scale: Var<'t, T>,
    /// `[H*W, 1]`
    pub opacity: Var<'t, T>,
    /// `[H*W, 12]` degree-1 SH coefficients.
    pub sh: Var<'t, T>,
}

impl<'t, T: Real> ParentMap<'t, T> {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[H*W, 24]` activated parameters with the mean and rotation in
    /// world coordinates.
    pub fn activated_world(&self) -> Result<Var<'t, T>, NumericsError> {
        concat(
            &[
                self.depth,
                self.mean_world,
                self.quat_world,
                self.scale,
                self.opacity,
                self.sh,
            ],
            1,
        )
    }

    /// Same as [`Self::activated_world`] but in the input camera frame.
    pub fn activated_camera(&self) -> Result<Var<'t, T>, NumericsError> {
        concat(
            &[
                self.depth,
                self.mean_cam,
                self.quat_cam,
                self.scale,
                self.opacity,
                self.sh,
            ],
            1,
        )
    }

    /// The per-pixel parents as plain world-space Gaussians.
    pub fn to_gaussians(&self) -> Result<Vec<Gaussian3D>, SceneError> {
        let m = self.mean_world.value();
        let q = self.quat_world.value();
        let s = self.scale.value();
        let o = self.opacity.value();
        let c = self.sh.value();
        let f = |v: T| v.to_f64() as f32;
        (0..self.len())
            .map(|i| {
                let mut sh = [0.0f32; 12];
                for (k, v) in sh.iter_mut().enumerate() {
                    *v = f(c.data()[i * 12 + k]);
                }
                Gaussian3D::new(
                    core::array::from_fn(|k| f(m.data()[i * 3 + k])),
                    core::array::from_fn(|k| f(q.data()[i * 4 + k])),
                    core::array::from_fn(|k| f(s.data()[i * 3 + k])),
                    f(o.data()[i]),
                    GaussianColor::Sh(sh),
                )
            })
            .collect()
    }
}

/// `[H*W, 3]` rays `K^-1 (u + 0.5, v + 0.5, 1)` through pixel centers.
pub fn pixel_rays<T: Real>(cam: &CameraPose, height: usize, width: usize) -> Tensor<T> {
    let k: [[f64; 3]; 3] = core::array::from_fn(|i| core::array::from_fn(|j| cam.intrinsics()[i][j] as f64));
    let kinv = inverse3(&k).expect("validated intrinsics");
    let mut data = Vec::with_capacity(height * width * 3);
    for v in 0..height {
        for u in 0..width {
            let r = mat_vec(&kinv, &[u as f64 + 0.5, v as f64 + 0.5, 1.0]);
            data.extend([T::of(r[0] / r[2]), T::of(r[1] / r[2]), T::one()]);
        }
    }
    Tensor::new(&[height * width, 3], data).expect("positive image size")
}

/// Matrix `L` with `a ⊗ q = L q` for quaternions `(w, x, y, z)`.
fn left_mul_matrix(a: [f64; 4]) -> [[f64; 4]; 4] {
    let [w, x, y, z] = a;
    [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
}

/// Activates `[H, W, 24]` head output for the input camera `cam`: depth
/// through a scaled sigmoid, means `ray * d + offset` in the camera frame
/// then moved to world, normalized quaternions, clamped exp scales and
/// sigmoid opacity.
pub fn activate_and_lift<'t, T: Real>(
    raw: Var<'t, T>,
    cam: &CameraPose,
    cfg: &LiftConfig,
) -> Result<ParentMap<'t, T>, NumericsError> {
    let shape = raw.shape();
    if shape.len() != 3 || shape[2] != RAW_CHANNELS {
        return Err(NumericsError::InvalidShape {
            shape,
            reason: "parent head output must be [H, W, 24]",
        });
    }
    let (height, width) = (shape[0], shape[1]);
    let tape = raw.tape();
    let raw = raw.reshape(&[height * width, RAW_CHANNELS])?;
    let lim = T::of(LOGIT_LIMIT);
    let (zn, zf) = (cam.znear() as f64, cam.zfar() as f64);

    let depth = raw
        .channels(layout::DEPTH, 1)?
        .clamp(-lim, lim)?
        .sigmoid()?
        .mul_scalar(T::of(zf - zn))?
        .add_scalar(T::of(zn))?;
    let rays = tape.constant(pixel_rays(cam, height, width));
    let mean_cam = rays.mul(depth)?.add(raw.channels(layout::OFFSET, 3)?)?;

    // world = R^T (cam - t), i.e. row vectors times R
    let rot = cam.rotation();
    let t = cam.translation();
    let t_var = tape.constant(Tensor::new(&[3], t.iter().map(|&v| T::of(v as f64)).collect())?);
    let r_var = tape.constant(Tensor::new(
        &[3, 3],
        rot.iter().flatten().map(|&v| T::of(v as f64)).collect(),
    )?);
    let mean_world = mean_cam.sub(t_var)?.matmul(r_var)?;

    let q = raw.channels(layout::QUAT, 4)?;
    let quat_cam = q.div(q.l2norm_last()?.add_scalar(T::of(1e-12))?)?;
    let rot64: [[f64; 3]; 3] = core::array::from_fn(|i| core::array::from_fn(|j| rot[i][j] as f64));
    let l = left_mul_matrix(rotmat_to_quat(&transpose(&rot64)));
    // rows times L^T
    let lt: Vec<T> = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .map(|(i, j)| T::of(l[j][i]))
        .collect();
    let quat_world = quat_cam.matmul(tape.constant(Tensor::new(&[4, 4], lt)?))?;

    let (lo, hi) = cfg.log_scale_range();
    let scale = raw
        .channels(layout::SCALE, 3)?
        .clamp(T::of(lo), T::of(hi))?
        .exp()?;
    let opacity = raw.channels(layout::OPACITY, 1)?.clamp(-lim, lim)?.sigmoid()?;
    let sh = raw.channels(layout::SH, 12)?;
    Ok(ParentMap {
        height,
        width,
        raw,
        depth,
        mean_cam,
        mean_world,
        quat_cam,
        quat_world,
        scale,
        opacity,
        sh,
    })
}
