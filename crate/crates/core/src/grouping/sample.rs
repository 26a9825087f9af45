use nalgebra::Vector3;

use super::{GroupSet, GroupingError};
use crate::camera::Camera;

/// Maps a 3D point to a location index of the grouping field.
pub trait Locator {
    fn locate(&self, position: [f32; 3]) -> Option<usize>;
}

/// Nearest pixel of a source view, indexed row-major.
#[derive(Debug, Clone)]
pub struct CameraLocator {
    pub camera: Camera,
}

impl Locator for CameraLocator {
    fn locate(&self, position: [f32; 3]) -> Option<usize> {
        let c = &self.camera;
        let p = c.to_camera(Vector3::new(
            position[0] as f64,
            position[1] as f64,
            position[2] as f64,
        ));
        if p.z <= c.near {
            return None;
        }
        let u = c.fx * p.x / p.z + c.cx;
        let v = c.fy * p.y / p.z + c.cy;
        if !(u >= 0.0 && v >= 0.0 && u < c.width as f64 && v < c.height as f64) {
            return None;
        }
        // Pixel centers sit at integer + 0.5, so flooring picks the nearest.
        Some(v.floor() as usize * c.width as usize + u.floor() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledWeights {
    /// One K-simplex vector per primitive.
    pub weights: Vec<Vec<f64>>,
    /// Primitives the locator could not place; they got the uniform vector.
    pub unlocated: Vec<usize>,
}

/// Reads each primitive's weights off the group maps at its located
/// position.
pub fn sample_weights(
    groups: &GroupSet,
    positions: &[[f32; 3]],
    locator: &impl Locator,
) -> Result<SampledWeights, GroupingError> {
    let k = groups.k();
    let mut weights = Vec::with_capacity(positions.len());
    let mut unlocated = Vec::new();
    for (i, &p) in positions.iter().enumerate() {
        match locator.locate(p) {
            Some(s) if s < groups.locations() => {
                weights.push(groups.maps.column(s).to_vec());
            }
            Some(s) => {
                return Err(GroupingError::Shape(format!(
                    "locator returned location {s} for primitive {i}, field has {}",
                    groups.locations()
                )))
            }
            None => {
                unlocated.push(i);
                weights.push(vec![1.0 / k as f64; k]);
            }
        }
    }
    Ok(SampledWeights { weights, unlocated })
}
