//! Gaussians, cameras, covariance factorization and SH color.

mod camera;
mod gaussian;
mod rotation;
mod sh;

pub use camera::CameraPose;
pub use gaussian::{Gaussian3D, GaussianColor, GaussianMixture};
pub(crate) use rotation::{covariance_from_rotation, quat_norm, rotmat_vjp, unit_quat_to_rotmat};
pub use rotation::{assemble_covariance, quat_mul, quat_to_rotmat, rotmat_to_quat};
pub use sh::{eval_sh_color, sh_basis, SH_BASIS, SH_C0, SH_C1, SH_COEFFS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("scale components must be positive")]
    NonPositiveScale,
    #[error("opacity {0} outside (0, 1)")]
    OpacityOutOfRange(f32),
    #[error("mean has a non-finite component")]
    NonFiniteMean,
    #[error("expected 12 SH coefficients, got {0}")]
    CoefficientCount(usize),
    #[error("view direction is not unit length")]
    NonUnitDirection,
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
}
