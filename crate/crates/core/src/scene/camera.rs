use crate::linalg::{cross, dot, inverse3, mat_vec, norm, sub, transpose, Mat3, Vec3};

use super::SceneError;

/// Pinhole camera: intrinsics `K`, a rigid world-to-camera transform and the
/// depth range of interest. Camera axes follow the x-right, y-down,
/// z-forward convention; pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    intrinsics: [[f32; 3]; 3],
    world_to_camera: [[f32; 4]; 4],
    center: [f32; 3],
    znear: f32,
    zfar: f32,
}

impl CameraPose {
    pub fn new(
        intrinsics: [[f32; 3]; 3],
        world_to_camera: [[f32; 4]; 4],
        znear: f32,
        zfar: f32,
    ) -> Result<Self, SceneError> {
        if !(znear > 0.0 && znear < zfar) || !zfar.is_finite() {
            return Err(SceneError::InvalidCamera("need 0 < znear < zfar"));
        }
        let k = &intrinsics;
        if k[0][1] != 0.0 || k[1][0] != 0.0 || k[2] != [0.0, 0.0, 1.0] {
            return Err(SceneError::InvalidCamera("intrinsics must be [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]"));
        }
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(SceneError::InvalidCamera("focal lengths must be positive"));
        }
        if inverse3(&intrinsics).is_none() {
            return Err(SceneError::InvalidCamera("intrinsics are singular"));
        }
        let rot = rotation_block(&world_to_camera);
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&rot[i], &rot[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                if (d - expect).abs() > 1e-5 {
                    return Err(SceneError::InvalidCamera("rotation block is not orthonormal"));
                }
            }
        }
        if crate::linalg::det3(&rot) < 0.0 {
            return Err(SceneError::InvalidCamera("rotation block is a reflection"));
        }
        if world_to_camera[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(SceneError::InvalidCamera("last extrinsics row must be (0, 0, 0, 1)"));
        }
        let t = [world_to_camera[0][3], world_to_camera[1][3], world_to_camera[2][3]];
        let c = mat_vec(&transpose(&rot), &t);
        Ok(Self {
            intrinsics,
            world_to_camera,
            center: [-c[0], -c[1], -c[2]],
            znear,
            zfar,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` giving the world's
    /// upward direction (image rows run against it).
    pub fn look_at(
        eye: [f32; 3],
        target: [f32; 3],
        up: [f32; 3],
        intrinsics: [[f32; 3]; 3],
        znear: f32,
        zfar: f32,
    ) -> Result<Self, SceneError> {
        let f = sub(&target, &eye);
        let fl = norm(&f);
        if !(fl > 0.0) {
            return Err(SceneError::InvalidCamera("eye and target coincide"));
        }
        let forward = f.map(|v| v / fl);
        let r = cross(&forward, &up);
        let rl = norm(&r);
        if rl < 1e-6 {
            return Err(SceneError::InvalidCamera("up vector parallel to view direction"));
        }
        let right = r.map(|v| v / rl);
        let down = cross(&forward, &right);
        let rot = [right, down, forward];
        let t = mat_vec(&rot, &eye);
        let mut m = [[0.0f32; 4]; 4];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&rot[i]);
            m[i][3] = -t[i];
        }
        m[3][3] = 1.0;
        Self::new(intrinsics, m, znear, zfar)
    }

    /// Square-pixel intrinsics with the principal point at the image center.
    pub fn intrinsics_for(width: usize, height: usize, focal: f32) -> [[f32; 3]; 3] {
        [
            [focal, 0.0, width as f32 / 2.0],
            [0.0, focal, height as f32 / 2.0],
            [0.0, 0.0, 1.0],
        ]
    }

    pub fn intrinsics(&self) -> &[[f32; 3]; 3] {
        &self.intrinsics
    }

    pub fn world_to_camera(&self) -> &[[f32; 4]; 4] {
        &self.world_to_camera
    }

    /// World-space camera position, `-Rᵀ t`.
    pub fn center(&self) -> [f32; 3] {
        self.center
    }

    pub fn znear(&self) -> f32 {
        self.znear
    }

    pub fn zfar(&self) -> f32 {
        self.zfar
    }

    pub fn rotation(&self) -> Mat3<f32> {
        rotation_block(&self.world_to_camera)
    }

    pub fn translation(&self) -> Vec3<f32> {
        let m = &self.world_to_camera;
        [m[0][3], m[1][3], m[2][3]]
    }

    pub fn fx(&self) -> f32 {
        self.intrinsics[0][0]
    }

    pub fn fy(&self) -> f32 {
        self.intrinsics[1][1]
    }

    pub fn cx(&self) -> f32 {
        self.intrinsics[0][2]
    }

    pub fn cy(&self) -> f32 {
        self.intrinsics[1][2]
    }

    pub fn world_to_camera_point(&self, p: [f32; 3]) -> [f32; 3] {
        let q = mat_vec(&self.rotation(), &p);
        let t = self.translation();
        [q[0] + t[0], q[1] + t[1], q[2] + t[2]]
    }

    pub fn camera_to_world_point(&self, p: [f32; 3]) -> [f32; 3] {
        let t = self.translation();
        mat_vec(&transpose(&self.rotation()), &sub(&p, &t))
    }

    /// Homogeneous ray `(x, y, 1)` through the center of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: usize, v: usize) -> [f32; 3] {
        let kinv = inverse3(&self.intrinsics).expect("validated at construction");
        let r = mat_vec(&kinv, &[u as f32 + 0.5, v as f32 + 0.5, 1.0]);
        [r[0] / r[2], r[1] / r[2], 1.0]
    }
}

fn rotation_block(m: &[[f32; 4]; 4]) -> Mat3<f32> {
    [
        [m[0][0], m[0][1], m[0][2]],
        [m[1][0], m[1][1], m[1][2]],
        [m[2][0], m[2][1], m[2][2]],
    ]
}
