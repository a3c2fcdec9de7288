use crate::linalg::Mat3;
use crate::numerics::Real;

use super::SceneError;

/// Rotation matrix of a `(w, x, y, z)` quaternion, normalized first.
pub fn quat_to_rotmat<T: Real>(quat: [T; 4]) -> Result<Mat3<T>, SceneError> {
    let n = quat_norm(&quat);
    if !(n > T::zero()) || !n.is_finite() {
        return Err(SceneError::ZeroQuaternion);
    }
    Ok(unit_quat_to_rotmat(&quat.map(|c| c / n)))
}

pub(crate) fn quat_norm<T: Real>(q: &[T; 4]) -> T {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub(crate) fn unit_quat_to_rotmat<T: Real>(q: &[T; 4]) -> Mat3<T> {
    let [w, x, y, z] = *q;
    let one = T::one();
    let two = T::of(2.0);
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized)
/// quaternion that produced it.
pub(crate) fn rotmat_vjp<T: Real>(quat: &[T; 4], g: &Mat3<T>) -> [T; 4] {
    let n = quat_norm(quat);
    let q = quat.map(|c| c / n);
    let [w, x, y, z] = q;
    let two = T::of(2.0);
    let four = T::of(4.0);
    let dw = two
        * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = two * (y * g[0][1] + z * g[0][2] + y * g[1][0] - w * g[1][2] + z * g[2][0] + w * g[2][1])
        - four * x * (g[1][1] + g[2][2]);
    let dy = two * (x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1])
        - four * y * (g[0][0] + g[2][2]);
    let dz = two * (-w * g[0][1] + x * g[0][2] + w * g[1][0] + y * g[1][2] + x * g[2][0] + y * g[2][1])
        - four * z * (g[0][0] + g[1][1]);
    let dq = [dw, dx, dy, dz];
    let proj = dq[0] * q[0] + dq[1] * q[1] + dq[2] * q[2] + dq[3] * q[3];
    [
        (dq[0] - q[0] * proj) / n,
        (dq[1] - q[1] * proj) / n,
        (dq[2] - q[2] * proj) / n,
        (dq[3] - q[3] * proj) / n,
    ]
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(scale)`.
pub fn assemble_covariance<T: Real>(quat: [T; 4], scale: [T; 3]) -> Result<Mat3<T>, SceneError> {
    if scale.iter().any(|&s| !(s > T::zero())) {
        return Err(SceneError::NonPositiveScale);
    }
    let r = quat_to_rotmat(quat)?;
    Ok(covariance_from_rotation(&r, &scale))
}

pub(crate) fn covariance_from_rotation<T: Real>(r: &Mat3<T>, scale: &[T; 3]) -> Mat3<T> {
    let s2 = scale.map(|s| s * s);
    let mut cov = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = r[i][0] * r[j][0] * s2[0] + r[i][1] * r[j][1] * s2[1] + r[i][2] * r[j][2] * s2[2];
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    cov
}

/// Quaternion product `a ⊗ b`.
pub fn quat_mul<T: Real>(a: &[T; 4], b: &[T; 4]) -> [T; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Unit quaternion of a proper rotation matrix (Shepperd's method).
pub fn rotmat_to_quat<T: Real>(m: &Mat3<T>) -> [T; 4] {
    let one = T::one();
    let quarter = T::of(0.25);
    let tr = m[0][0] + m[1][1] + m[2][2];
    let q = if tr > T::zero() {
        let s = (tr + one).sqrt() * T::of(2.0);
        [
            quarter * s,
            (m[2][1] - m[1][2]) / s,
            (m[0][2] - m[2][0]) / s,
            (m[1][0] - m[0][1]) / s,
        ]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::of(2.0);
        [
            (m[2][1] - m[1][2]) / s,
            quarter * s,
            (m[0][1] + m[1][0]) / s,
            (m[0][2] + m[2][0]) / s,
        ]
    } else if m[1][1] > m[2][2] {
        let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::of(2.0);
        [
            (m[0][2] - m[2][0]) / s,
            (m[0][1] + m[1][0]) / s,
            quarter * s,
            (m[1][2] + m[2][1]) / s,
        ]
    } else {
        let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::of(2.0);
        [
            (m[1][0] - m[0][1]) / s,
            (m[0][2] + m[2][0]) / s,
            (m[1][2] + m[2][1]) / s,
            quarter * s,
        ]
    };
    let n = quat_norm(&q);
    q.map(|c| c / n)
}
