use alloc::vec::Vec;

use super::rotation::quat_norm;
use super::sh::SH_COEFFS;
use super::SceneError;

#[derive(Clone, Debug, PartialEq)]
pub enum GaussianColor {
    /// Degree-1 spherical harmonics, `[channel][basis]`.
    Sh([f32; SH_COEFFS]),
    /// View-independent color.
    Rgb([f32; 3]),
}

/// One 3D Gaussian primitive. The quaternion is `(w, x, y, z)` and is
/// normalized on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    mean: [f32; 3],
    quat: [f32; 4],
    scale: [f32; 3],
    opacity: f32,
    color: GaussianColor,
}

impl Gaussian3D {
    pub fn new(
        mean: [f32; 3],
        quat: [f32; 4],
        scale: [f32; 3],
        opacity: f32,
        color: GaussianColor,
    ) -> Result<Self, SceneError> {
        let n = quat_norm(&quat);
        if !(n > 0.0) || !n.is_finite() {
            return Err(SceneError::ZeroQuaternion);
        }
        if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(SceneError::NonPositiveScale);
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(SceneError::OpacityOutOfRange(opacity));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(SceneError::NonFiniteMean);
        }
        Ok(Self {
            mean,
            quat: quat.map(|c| c / n),
            scale,
            opacity,
            color,
        })
    }

    pub fn mean(&self) -> [f32; 3] {
        self.mean
    }

    pub fn quat(&self) -> [f32; 4] {
        self.quat
    }

    pub fn scale(&self) -> [f32; 3] {
        self.scale
    }

    pub fn opacity(&self) -> f32 {
        self.opacity
    }

    pub fn color(&self) -> &GaussianColor {
        &self.color
    }
}

/// Ordered collection of Gaussians rendered together.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianMixture {
    pub gaussians: Vec<Gaussian3D>,
}

impl GaussianMixture {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}
