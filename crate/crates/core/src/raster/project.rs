//! EWA projection of 3D Gaussians to screen-space ellipses.

use nalgebra::{Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::camera::Camera;
use crate::scene::GaussianPrimitive;

/// Added to the screen-space covariance diagonal (pixels²).
pub const COV2D_FLOOR: f64 = 0.3;
/// Footprint half-extent in standard deviations.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSplat {
    pub mean2d: [f64; 2],
    /// Symmetric 2x2 covariance in pixels², including the floor.
    pub cov2d: [[f64; 2]; 2],
    pub depth: f64,
    pub primitive_index: usize,
    /// Pixel rectangle `[x0, x1) x [y0, y1)` whose centers lie inside the footprint box.
    pub pixel_rect: [u32; 4],
}

impl ProjectedSplat {
    /// Inverse covariance as (a, b, c) with `[[a, b], [b, c]]`.
    pub fn conic(&self) -> [f64; 3] {
        let [[a, b], [_, c]] = self.cov2d;
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let [[a, b], [_, c]] = self.cov2d;
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        [mid - rad, mid + rad]
    }
}

/// World-space covariance `R diag(s²) Rᵀ`.
pub fn covariance3d(rotation: [f32; 4], scale: [f32; 3]) -> Matrix3<f64> {
    let [w, x, y, z] = rotation.map(|v| v as f64);
    let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
    let r = q.to_rotation_matrix().into_inner();
    let s2 = Matrix3::from_diagonal(&Vector3::new(
        (scale[0] as f64).powi(2),
        (scale[1] as f64).powi(2),
        (scale[2] as f64).powi(2),
    ));
    r * s2 * r.transpose()
}

/// Projects one primitive; `None` when it is clipped by the depth range or
/// its footprint misses every pixel center.
pub fn project(
    primitive: &GaussianPrimitive,
    index: usize,
    camera: &Camera,
) -> Option<ProjectedSplat> {
    let world = Vector3::new(
        primitive.position[0] as f64,
        primitive.position[1] as f64,
        primitive.position[2] as f64,
    );
    let t = camera.to_camera(world);
    let depth = t.z;
    if !(depth > camera.near && depth < camera.far) {
        return None;
    }

    let mean2d = [
        camera.fx * t.x / depth + camera.cx,
        camera.fy * t.y / depth + camera.cy,
    ];

    // Clamp the Jacobian's evaluation point so far off-screen splats do not blow up.
    let lim_x = 1.3 * 0.5 * camera.width as f64 / camera.fx;
    let lim_y = 1.3 * 0.5 * camera.height as f64 / camera.fy;
    let tx = (t.x / depth).clamp(-lim_x, lim_x) * depth;
    let ty = (t.y / depth).clamp(-lim_y, lim_y) * depth;
    let z2 = depth * depth;
    let jac = Matrix2x3::new(
        camera.fx / depth,
        0.0,
        -camera.fx * tx / z2,
        0.0,
        camera.fy / depth,
        -camera.fy * ty / z2,
    );
    let w = camera.rotation();
    let sigma = covariance3d(primitive.rotation, primitive.scale);
    let m = jac * w;
    let cov = m * sigma * m.transpose();
    let a = cov[(0, 0)] + COV2D_FLOOR;
    let b = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    let c = cov[(1, 1)] + COV2D_FLOOR;

    let mid = 0.5 * (a + c);
    let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let radius = FOOTPRINT_SIGMAS * lambda_max.sqrt();
    if !radius.is_finite() {
        return None;
    }
    // Pixel centers sit at integer + 0.5.
    let x0 = (mean2d[0] - radius - 0.5).ceil().max(0.0);
    let x1 = (mean2d[0] + radius - 0.5).floor().min(camera.width as f64 - 1.0) + 1.0;
    let y0 = (mean2d[1] - radius - 0.5).ceil().max(0.0);
    let y1 = (mean2d[1] + radius - 0.5).floor().min(camera.height as f64 - 1.0) + 1.0;
    if !(x1 > x0 && y1 > y0) {
        return None;
    }

    Some(ProjectedSplat {
        mean2d,
        cov2d: [[a, b], [b, c]],
        depth,
        primitive_index: index,
        pixel_rect: [x0 as u32, x1 as u32, y0 as u32, y1 as u32],
    })
}
