//! Pinhole camera with an OpenCV-style frame: x right, y down, z forward.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHO_TOL: f64 = 1e-6;

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("clip planes must satisfy 0 < near < far (near={near}, far={far})")]
    Clip { near: f64, far: f64 },
    #[error("world_to_camera rotation is not orthonormal (error {0:e})")]
    Rotation(f64),
    #[error("world_to_camera last row must be [0, 0, 0, 1]")]
    Projective,
    #[error("image size must be nonzero ({width}x{height})")]
    Size { width: u32, height: u32 },
    #[error("non-finite camera parameter")]
    NonFinite,
    #[error("orbit radius must be positive, got {0}")]
    Radius(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: Matrix4<f64>,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<(), CameraError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near, self.far]
            .iter()
            .chain(self.world_to_camera.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(CameraError::NonFinite);
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::Focal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(CameraError::Clip {
                near: self.near,
                far: self.far,
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Size {
                width: self.width,
                height: self.height,
            });
        }
        let m = &self.world_to_camera;
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(CameraError::Projective);
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).amax();
        if err > ORTHO_TOL {
            return Err(CameraError::Rotation(err));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn to_camera(&self, world: Vector3<f64>) -> Vector3<f64> {
        self.rotation() * world + self.translation()
    }

    /// World-space origin and (unnormalized) direction of the ray through
    /// image point `(u, v)`; pixel centers sit at integer + 0.5.
    pub fn ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let rt = self.rotation().transpose();
        let origin = -(rt * self.translation());
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (origin, rt * d)
    }

    /// Camera at `eye` looking at `target`; `fov_y` in radians.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        let mut w2c = Matrix4::identity();
        w2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        w2c.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        let fy = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Self {
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            world_to_camera: w2c,
            width,
            height,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    /// Orbit camera around `target`. Azimuth 0 and elevation 0 place the eye
    /// on the -z axis; positive elevation lifts the eye toward -y (up).
    pub fn orbit(
        azimuth: f64,
        elevation: f64,
        radius: f64,
        target: Vector3<f64>,
        fov_y: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        if !(radius > 0.0) {
            return Err(CameraError::Radius(radius));
        }
        let dir = Vector3::new(
            azimuth.sin() * elevation.cos(),
            -elevation.sin(),
            -azimuth.cos() * elevation.cos(),
        );
        Ok(Self::look_at(
            target + dir * radius,
            target,
            Vector3::new(0.0, -1.0, 0.0),
            fov_y,
            width,
            height,
        ))
    }
}

/// JSON form of a camera used by files and the HTTP interface.
/// `w2c` is the row-major 4x4 world-to-camera transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w2c: Vec<f64>,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

fn default_near() -> f64 {
    DEFAULT_NEAR
}

fn default_far() -> f64 {
    DEFAULT_FAR
}

#[derive(Debug, Error)]
pub enum CameraSpecError {
    #[error("w2c must have 16 entries, got {0}")]
    MatrixLength(usize),
    #[error(transparent)]
    Invalid(#[from] CameraError),
}

impl TryFrom<CameraSpec> for Camera {
    type Error = CameraSpecError;

    fn try_from(spec: CameraSpec) -> Result<Self, Self::Error> {
        if spec.w2c.len() != 16 {
            return Err(CameraSpecError::MatrixLength(spec.w2c.len()));
        }
        let camera = Camera {
            fx: spec.fx,
            fy: spec.fy,
            cx: spec.cx,
            cy: spec.cy,
            world_to_camera: Matrix4::from_row_slice(&spec.w2c),
            width: spec.width,
            height: spec.height,
            near: spec.near,
            far: spec.far,
        };
        camera.validate()?;
        Ok(camera)
    }
}

impl From<&Camera> for CameraSpec {
    fn from(c: &Camera) -> Self {
        let mut w2c = Vec::with_capacity(16);
        for r in 0..4 {
            for col in 0..4 {
                w2c.push(c.world_to_camera[(r, col)]);
            }
        }
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            w2c,
            width: c.width,
            height: c.height,
            near: c.near,
            far: c.far,
        }
    }
}
