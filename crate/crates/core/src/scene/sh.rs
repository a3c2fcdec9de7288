use crate::linalg::Vec3;
use crate::numerics::Real;

use super::SceneError;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Coefficients per color channel (degree 0 and 1).
pub const SH_BASIS: usize = 4;
/// Total coefficient count, laid out `[channel][basis]`.
pub const SH_COEFFS: usize = 3 * SH_BASIS;

/// Real SH basis up to degree 1 at a unit direction, ordered
/// `(Y00, Y1-1, Y10, Y11)`.
#[inline]
pub fn sh_basis<T: Real>(dir: &Vec3<T>) -> [T; 4] {
    let c1 = T::of(SH_C1);
    [T::of(SH_C0), -c1 * dir[1], c1 * dir[2], -c1 * dir[0]]
}

/// RGB of degree-1 SH coefficients seen from `view_dir`: the basis
/// expansion plus 0.5, clamped to `[0, 1]`.
pub fn eval_sh_color(coeffs: &[f32], view_dir: [f32; 3]) -> Result<[f32; 3], SceneError> {
    if coeffs.len() != SH_COEFFS {
        return Err(SceneError::CoefficientCount(coeffs.len()));
    }
    let n = num_traits::Float::sqrt(
        view_dir[0] * view_dir[0] + view_dir[1] * view_dir[1] + view_dir[2] * view_dir[2],
    );
    if (n - 1.0).abs() > 1e-4 {
        return Err(SceneError::NonUnitDirection);
    }
    let basis = sh_basis(&view_dir);
    let mut rgb = [0.0f32; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let raw: f32 = (0..SH_BASIS).map(|b| coeffs[c * SH_BASIS + b] * basis[b]).sum();
        *out = (raw + 0.5).clamp(0.0, 1.0);
    }
    Ok(rgb)
}
