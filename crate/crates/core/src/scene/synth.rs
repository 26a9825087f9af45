//! Deterministic scene generators for tests, benchmarks, and demos.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use super::{GaussianPrimitive, Scene, SemanticDictionary, VocabularyTable};
use crate::camera::Camera;

/// Half-width of the square the synthetic grid occupies in the z = 0 plane.
pub const SYNTHETIC_EXTENT: f32 = 1.0;

const TERMS: [&str; 16] = [
    "chair", "table", "floor", "wall", "sofa", "lamp", "bed", "window", "door", "shelf",
    "plant", "rug", "desk", "cabinet", "mirror", "curtain",
];

const PALETTE: [[f32; 3]; 8] = [
    [0.85, 0.25, 0.20],
    [0.20, 0.60, 0.85],
    [0.30, 0.75, 0.30],
    [0.90, 0.80, 0.25],
    [0.60, 0.35, 0.75],
    [0.95, 0.55, 0.15],
    [0.40, 0.40, 0.40],
    [0.15, 0.80, 0.75],
];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("n_regions ({regions}) must not exceed k ({k})")]
    TooManyRegions { regions: usize, k: usize },
    #[error("k, c and n_regions must all be at least 1")]
    Empty,
}

/// Region of a point on the synthetic grid: vertical strips along x.
pub fn region_of_x(x: f32, n_regions: usize) -> usize {
    let u = (x + SYNTHETIC_EXTENT) / (2.0 * SYNTHETIC_EXTENT);
    ((u * n_regions as f32).floor().max(0.0) as usize).min(n_regions - 1)
}

/// Term name for region `r`.
pub(crate) fn term_name(r: usize) -> String {
    if r < TERMS.len() {
        TERMS[r].to_string()
    } else {
        format!("{}_{}", TERMS[r % TERMS.len()], r / TERMS.len())
    }
}

/// Camera on the -z axis framing the whole synthetic grid.
pub fn synthetic_camera(width: u32, height: u32) -> Camera {
    let fov = 2.0 * (1.2f64 / 3.0).atan();
    Camera::look_at(
        Vector3::new(0.0, 0.0, -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        fov,
        width,
        height,
    )
}

/// Unit atoms; the first `min(k, c)` are mutually orthogonal (Gram-Schmidt on
/// Gaussian draws), any further ones are random unit vectors.
fn orthogonal_atoms(rng: &mut ChaCha8Rng, k: usize, c: usize) -> Vec<f32> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut *rng)).collect();
        if rows.len() < c {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    rows.into_iter().flatten().map(|x| x as f32).collect()
}

fn random_quaternion(rng: &mut ChaCha8Rng) -> [f32; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut *rng));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return q.map(|x| (x / n) as f32);
        }
    }
}

/// Grid of primitives in the z = 0 plane, split into `n_regions` vertical
/// strips. Every primitive in strip `r` is one-hot on atom `r`, and the
/// vocabulary holds one term per strip whose embedding is that strip's atom.
pub fn make_synthetic_scene(
    seed: u64,
    n_primitives: usize,
    k: usize,
    c: usize,
    n_regions: usize,
) -> Result<Scene, SynthError> {
    if k == 0 || c == 0 || n_regions == 0 {
        return Err(SynthError::Empty);
    }
    if n_regions > k {
        return Err(SynthError::TooManyRegions { regions: n_regions, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = orthogonal_atoms(&mut rng, k, c);
    let dictionary = SemanticDictionary::normalized(k, c, atoms).expect("atoms have unit norm");

    let cols = (n_primitives as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n_primitives.div_ceil(cols).max(1);
    let extent = SYNTHETIC_EXTENT;
    let sx = 2.0 * extent / cols as f32;
    let sy = 2.0 * extent / rows as f32;
    let sigma = 0.6 * sx.min(sy);

    let mut primitives = Vec::with_capacity(n_primitives);
    for i in 0..n_primitives {
        let (row, col) = (i / cols, i % cols);
        let x = -extent + (col as f32 + 0.5) * sx + rng.random_range(-0.25..0.25) * sx;
        let y = -extent + (row as f32 + 0.5) * sy + rng.random_range(-0.25..0.25) * sy;
        let z = rng.random_range(-0.01..0.01) * sx;
        let region = region_of_x(x, n_regions);
        let base = PALETTE[region % PALETTE.len()];
        let color = base.map(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
        let scale = std::array::from_fn(|_| sigma * rng.random_range(0.8..1.2));
        let mut weights = vec![0.0; k];
        weights[region] = 1.0;
        primitives.push(GaussianPrimitive {
            position: [x, y, z],
            rotation: random_quaternion(&mut rng),
            scale,
            opacity: rng.random_range(0.5..0.7),
            color,
            weights,
        });
    }

    let mut vocabulary = VocabularyTable::new();
    for r in 0..n_regions {
        vocabulary
            .push(term_name(r), dictionary.atom(r).to_vec())
            .expect("terms are unique");
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "synthetic-strips".to_string());
    metadata.insert("seed".to_string(), seed.to_string());
    metadata.insert("regions".to_string(), n_regions.to_string());

    Ok(Scene {
        primitives,
        dictionary,
        vocabulary,
        metadata,
    })
}

/// Unstructured scene: random positions in a box around the origin, random
/// orientations and scales, dense random simplex weights.
pub fn random_scene(seed: u64, n_primitives: usize, k: usize, c: usize) -> Scene {
    assert!(k >= 1 && c >= 1, "random_scene needs k, c >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms: Vec<f32> = (0..k * c)
        .map(|_| StandardNormal.sample(&mut rng))
        .map(|v: f64| v as f32)
        .collect();
    let dictionary = SemanticDictionary::normalized(k, c, atoms).expect("nonzero gaussian atoms");
    let primitives = (0..n_primitives)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0f64..1.0).powi(3)).collect();
            let total: f64 = raw.iter().sum::<f64>().max(1e-12);
            let mut weights: Vec<f32> = raw.iter().map(|w| (w / total) as f32).collect();
            if raw.iter().all(|&w| w == 0.0) {
                weights[0] = 1.0;
            }
            GaussianPrimitive {
                position: [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                ],
                rotation: random_quaternion(&mut rng),
                scale: std::array::from_fn(|_| rng.random_range(0.01..0.12)),
                opacity: rng.random_range(0.05..1.0),
                color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
                weights,
            }
        })
        .collect();
    let mut vocabulary = VocabularyTable::new();
    for r in 0..k.min(4) {
        vocabulary
            .push(term_name(r), dictionary.atom(r).to_vec())
            .expect("terms are unique");
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "random".to_string());
    metadata.insert("seed".to_string(), seed.to_string());
    Scene {
        primitives,
        dictionary,
        vocabulary,
        metadata,
    }
}
