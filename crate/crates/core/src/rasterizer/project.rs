use crate::linalg::{cast3, cast33, mat3_mul, mat_vec, transpose, Mat3, Vec3};
use crate::numerics::Real;
use crate::scene::{covariance_from_rotation, quat_norm, rotmat_vjp, unit_quat_to_rotmat, CameraPose};

use super::RasterConfig;

/// Camera quantities converted to the working precision.
#[derive(Clone, Debug)]
pub(crate) struct CameraContext<T: Real> {
    pub rot: Mat3<T>,
    pub trans: Vec3<T>,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub znear: T,
    pub zfar: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> CameraContext<T> {
    pub fn new(cam: &CameraPose, width: usize, height: usize) -> Self {
        let of = |v: f32| T::of(v as f64);
        Self {
            rot: cast33(&cam.rotation()),
            trans: cast3(&cam.translation()),
            fx: of(cam.fx()),
            fy: of(cam.fy()),
            cx: of(cam.cx()),
            cy: of(cam.cy()),
            znear: of(cam.znear()),
            zfar: of(cam.zfar()),
            width,
            height,
        }
    }
}

/// A projected Gaussian plus what the backward pass needs to revisit it.
#[derive(Clone, Debug)]
pub(crate) struct Splat<T: Real> {
    pub index: usize,
    pub mean2d: [T; 2],
    /// Regularized screen covariance `(a, b, c)` = `[[a, b], [b, c]]`.
    pub cov2d: [T; 3],
    /// Inverse of `cov2d`, same packing.
    pub conic: [T; 3],
    pub depth: T,
    pub color: [T; 3],
    pub opacity: T,
    /// Pixel radius outside which the splat's alpha is below threshold.
    pub radius: T,
    /// Exponents below this give alpha under the threshold; slightly loose
    /// so it never rejects a contributing pixel.
    pub power_floor: T,
    pub cam_point: Vec3<T>,
    pub rot: Mat3<T>,
    pub scale: Vec3<T>,
    /// `J W`, the linearized world-to-pixel map.
    pub jw: [[T; 3]; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CullReason {
    Depth,
    Frustum,
    Transparent,
    Degenerate,
}

pub(crate) fn project_one<T: Real>(
    index: usize,
    mean: Vec3<T>,
    quat: [T; 4],
    scale: Vec3<T>,
    opacity: T,
    color: [T; 3],
    cam: &CameraContext<T>,
    cfg: &RasterConfig,
) -> Result<Splat<T>, CullReason> {
    let rw = mat_vec(&cam.rot, &mean);
    let t = [rw[0] + cam.trans[0], rw[1] + cam.trans[1], rw[2] + cam.trans[2]];
    if !(t[2] > cam.znear && t[2] < cam.zfar) {
        return Err(CullReason::Depth);
    }
    let inv_z = T::one() / t[2];
    let u = cam.fx * t[0] * inv_z + cam.cx;
    let v = cam.fy * t[1] * inv_z + cam.cy;
    let half_w = T::of(cam.width as f64 * 0.5);
    let half_h = T::of(cam.height as f64 * 0.5);
    let margin = T::of(cfg.frustum_margin as f64);
    if ((u - half_w) / half_w).abs() > margin || ((v - half_h) / half_h).abs() > margin {
        return Err(CullReason::Frustum);
    }
    let alpha_min = T::of(cfg.alpha_min as f64);
    if !(opacity >= alpha_min) {
        return Err(CullReason::Transparent);
    }
    let qn = quat_norm(&quat);
    if !(qn > T::zero()) {
        return Err(CullReason::Degenerate);
    }
    let rot = unit_quat_to_rotmat(&quat.map(|c| c / qn));
    let sigma = covariance_from_rotation(&rot, &scale);
    let j = [
        [cam.fx * inv_z, T::zero(), -cam.fx * t[0] * inv_z * inv_z],
        [T::zero(), cam.fy * inv_z, -cam.fy * t[1] * inv_z * inv_z],
    ];
    let mut jw = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jw[r][c] = j[r][0] * cam.rot[0][c] + j[r][1] * cam.rot[1][c] + j[r][2] * cam.rot[2][c];
        }
    }
    let ms = [mat_vec(&transpose(&sigma), &jw[0]), mat_vec(&transpose(&sigma), &jw[1])];
    let lp = T::of(cfg.low_pass as f64);
    let a = dot3(&ms[0], &jw[0]) + lp;
    let b = dot3(&ms[0], &jw[1]);
    let c = dot3(&ms[1], &jw[1]) + lp;
    let det = a * c - b * b;
    if !(det > T::zero()) || !det.is_finite() {
        return Err(CullReason::Degenerate);
    }
    let inv_det = T::one() / det;
    let conic = [c * inv_det, -b * inv_det, a * inv_det];
    let mid = T::of(0.5) * (a + c);
    let lambda_max = mid + (T::of(0.25) * (a - c) * (a - c) + b * b).sqrt();
    let reach = T::of(2.0) * (opacity / alpha_min).ln();
    let radius = (reach.max(T::zero()) * lambda_max).sqrt() + T::one();
    Ok(Splat {
        index,
        mean2d: [u, v],
        cov2d: [a, b, c],
        conic,
        depth: t[2],
        color,
        opacity,
        radius,
        power_floor: -T::of(0.5) * reach - T::of(1e-3),
        cam_point: t,
        rot,
        scale,
        jw,
    })
}

#[inline]
fn dot3<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Gradients of one splat's inputs given gradients on its screen-space
/// quantities. `d_conic` holds `(dA, dB, dC)` with `B` the single shared
/// off-diagonal entry.
pub(crate) struct ScreenGrad<T> {
    pub d_mean2d: [T; 2],
    pub d_conic: [T; 3],
}

pub(crate) struct WorldGrad<T> {
    pub d_mean: Vec3<T>,
    pub d_quat: [T; 4],
    pub d_scale: Vec3<T>,
}

pub(crate) fn project_backward<T: Real>(
    splat: &Splat<T>,
    raw_quat: &[T; 4],
    g: &ScreenGrad<T>,
    cam: &CameraContext<T>,
) -> WorldGrad<T> {
    let [a, b, c] = splat.cov2d;
    let det = a * c - b * b;
    let inv_det2 = T::one() / (det * det);
    let [ga_, gb_, gc_] = g.d_conic;
    let two = T::of(2.0);
    // conic -> screen covariance
    let da = (-ga_ * c * c + gb_ * b * c - gc_ * b * b) * inv_det2;
    let db = (ga_ * two * b * c - gb_ * (a * c + b * b) + gc_ * two * a * b) * inv_det2;
    let dc = (-ga_ * b * b + gb_ * a * b - gc_ * a * a) * inv_det2;
    let half = T::of(0.5);
    let g2 = [[da, db * half], [db * half, dc]];

    let jw = &splat.jw;
    let sigma = covariance_from_rotation(&splat.rot, &splat.scale);
    // dSigma = (JW)^T G2 (JW)
    let mut d_sigma = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = T::zero();
            for r in 0..2 {
                for q in 0..2 {
                    s += jw[r][i] * g2[r][q] * jw[q][j];
                }
            }
            d_sigma[i][j] = s;
        }
    }
    // dM = 2 G2 M Sigma
    let mut d_jw = [[T::zero(); 3]; 2];
    for r in 0..2 {
        let gm = [
            g2[r][0] * jw[0][0] + g2[r][1] * jw[1][0],
            g2[r][0] * jw[0][1] + g2[r][1] * jw[1][1],
            g2[r][0] * jw[0][2] + g2[r][1] * jw[1][2],
        ];
        for col in 0..3 {
            d_jw[r][col] = two * (gm[0] * sigma[0][col] + gm[1] * sigma[1][col] + gm[2] * sigma[2][col]);
        }
    }
    // M = J W  =>  dJ = dM W^T
    let w = &cam.rot;
    let mut d_j = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for k in 0..3 {
            d_j[r][k] = d_jw[r][0] * w[k][0] + d_jw[r][1] * w[k][1] + d_jw[r][2] * w[k][2];
        }
    }
    let t = splat.cam_point;
    let iz = T::one() / t[2];
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let [gu, gv] = g.d_mean2d;
    let dtx = d_j[0][2] * (-fx * iz2) + gu * fx * iz;
    let dty = d_j[1][2] * (-fy * iz2) + gv * fy * iz;
    let dtz = d_j[0][0] * (-fx * iz2) + d_j[1][1] * (-fy * iz2)
        + d_j[0][2] * (two * fx * t[0] * iz3)
        + d_j[1][2] * (two * fy * t[1] * iz3)
        - gu * fx * t[0] * iz2
        - gv * fy * t[1] * iz2;
    let d_mean = mat_vec(&transpose(w), &[dtx, dty, dtz]);

    // Sigma = R diag(s^2) R^T
    let r = &splat.rot;
    let s = &splat.scale;
    let mut d_rot = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let gr = d_sigma[i][0] * r[0][j] + d_sigma[i][1] * r[1][j] + d_sigma[i][2] * r[2][j];
            d_rot[i][j] = two * gr * s[j] * s[j];
        }
    }
    let ds_t = mat3_mul(&transpose(r), &mat3_mul(&d_sigma, r));
    let d_scale = [
        two * s[0] * ds_t[0][0],
        two * s[1] * ds_t[1][1],
        two * s[2] * ds_t[2][2],
    ];
    WorldGrad {
        d_mean,
        d_quat: rotmat_vjp(raw_quat, &d_rot),
        d_scale,
    }
}
