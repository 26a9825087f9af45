//! CPU splatting renderer for RGB, depth, alpha, per-atom weight maps and
//! language-feature images.

mod export;
mod project;
mod render;

use thiserror::Error;

use crate::camera::CameraError;
use crate::real::Real;

pub use export::{
    alpha_png, read_feature_file, rgb_png, weight_map_png16, write_feature_file, FeatureFileError,
    FEATURE_MAGIC,
};
pub use project::{covariance3d, project, ProjectedSplat, COV2D_FLOOR, FOOTPRINT_SIGMAS};
pub use render::{
    assemble_features, render, render_features_direct, RenderOptions, ALPHA_MAX, ALPHA_MIN,
    TRANSMITTANCE_MIN,
};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    Camera(#[from] CameraError),
    #[error("primitive {primitive} has {found} weights, dictionary K is {expected}")]
    WeightLength {
        primitive: usize,
        expected: usize,
        found: usize,
    },
    #[error("weight stack has K={stack}, dictionary has K={dictionary}")]
    KMismatch { stack: usize, dictionary: usize },
    #[error("could not build thread pool: {0}")]
    ThreadPool(String),
}

/// K scalar maps stored pixel-major: `data[(y * width + x) * k + atom]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMapStack<T> {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub data: Vec<T>,
}

impl<T: Real> WeightMapStack<T> {
    pub fn zeros(width: usize, height: usize, k: usize) -> Self {
        Self {
            width,
            height,
            k,
            data: vec![T::zero(); width * height * k],
        }
    }

    /// All K weights at one pixel.
    pub fn pixel(&self, p: usize) -> &[T] {
        &self.data[p * self.k..(p + 1) * self.k]
    }

    pub fn pixel_mut(&mut self, p: usize) -> &mut [T] {
        &mut self.data[p * self.k..(p + 1) * self.k]
    }

    /// Copy of the map for one atom, row-major.
    pub fn map(&self, atom: usize) -> Vec<T> {
        self.data.chunks_exact(self.k).map(|w| w[atom]).collect()
    }
}

/// C-dim features stored pixel-major: `data[(y * width + x) * c + channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage<T> {
    pub width: usize,
    pub height: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureImage<T> {
    pub fn zeros(width: usize, height: usize, c: usize) -> Self {
        Self {
            width,
            height,
            c,
            data: vec![T::zero(); width * height * c],
        }
    }

    pub fn pixel(&self, p: usize) -> &[T] {
        &self.data[p * self.c..(p + 1) * self.c]
    }

    /// Largest absolute per-channel difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if (self.width, self.height, self.c) != (other.width, other.height, other.c) {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                .fold(0.0, f64::max),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<T> {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<T>,
    /// Opacity-weighted depth, `sum_i T_i a_i z_i`.
    pub depth: Vec<T>,
    /// Accumulated opacity `sum_i T_i a_i`.
    pub alpha: Vec<T>,
    /// Transmittance left after the last composited fragment, `prod_i (1 - a_i)`.
    pub transmittance: Vec<T>,
    pub weight_maps: WeightMapStack<T>,
}
