use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::GroupingError;

/// Per-location features of a scene, with a fixed positional encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureField {
    /// S x d
    pub features: Array2<f64>,
    /// S x d
    pub positions: Array2<f64>,
}

impl DenseFeatureField {
    pub fn new(features: Array2<f64>) -> Result<Self, GroupingError> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(GroupingError::Shape("field features must be finite".into()));
        }
        let positions = sinusoidal_positions(features.nrows(), features.ncols());
        Ok(Self {
            features,
            positions,
        })
    }

    pub fn locations(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// `pe[s, 2i] = sin(s / 10000^(2i/d))`, `pe[s, 2i+1] = cos(...)`.
pub fn sinusoidal_positions(s: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((s, d), |(pos, j)| {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Field whose feature at each location is its region's random code plus
/// Gaussian noise. Codes have standard-normal entries.
pub fn synthetic_region_field(
    labels: &[usize],
    n_regions: usize,
    d: usize,
    noise: f64,
    seed: u64,
) -> Result<DenseFeatureField, GroupingError> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_regions) {
        return Err(GroupingError::Shape(format!(
            "label {bad} out of range for {n_regions} regions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Array2<f64> =
        Array2::from_shape_fn((n_regions, d), |_| StandardNormal.sample(&mut rng));
    let features = Array2::from_shape_fn((labels.len(), d), |(s, j)| {
        let n: f64 = StandardNormal.sample(&mut rng);
        codes[(labels[s], j)] + noise * n
    });
    DenseFeatureField::new(features)
}
