//! Tile-based front-to-back compositing.
//!
//! Both rendering paths go through [`composite`], which walks the same
//! depth-sorted fragment list per pixel and applies the same alpha and
//! transmittance schedule; they differ only in the per-splat payload they
//! accumulate (RGB + depth + K weights, or the C-dim primitive feature).

use rayon::prelude::*;

use super::project::project;
use super::{FeatureImage, RenderError, RenderOutput, WeightMapStack};
use crate::camera::Camera;
use crate::real::Real;
use crate::scene::{Scene, SemanticDictionary};

/// Per-fragment alpha is clamped to this value.
pub const ALPHA_MAX: f64 = 0.99;
/// Fragments with alpha below this are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance drops below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub tile_size: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: 16,
            threads: None,
        }
    }
}

impl RenderOptions {
    pub fn single_threaded() -> Self {
        Self {
            threads: Some(1),
            ..Self::default()
        }
    }

    /// Runs `f` on a pool sized by `threads`.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R, RenderError> {
        match self.threads {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| RenderError::ThreadPool(e.to_string()))?;
                Ok(pool.install(f))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Splat<T> {
    mean: [T; 2],
    conic: [T; 3],
    opacity: T,
    rect: [u32; 4],
}

/// Splats in global front-to-back order plus per-tile index lists.
struct Binned<T> {
    splats: Vec<Splat<T>>,
    /// Scene index of each splat.
    source: Vec<usize>,
    depth: Vec<f64>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    tile_size: usize,
    width: usize,
    height: usize,
}

fn check_inputs(scene: &Scene, camera: &Camera) -> Result<(), RenderError> {
    camera.validate()?;
    let k = scene.k();
    if let Some((i, p)) = scene
        .primitives
        .iter()
        .enumerate()
        .find(|(_, p)| p.weights.len() != k)
    {
        return Err(RenderError::WeightLength {
            primitive: i,
            expected: k,
            found: p.weights.len(),
        });
    }
    Ok(())
}

fn bin<T: Real>(scene: &Scene, camera: &Camera, tile_size: usize) -> Binned<T> {
    let tile_size = tile_size.max(1);
    let width = camera.width as usize;
    let height = camera.height as usize;
    let mut projected: Vec<_> = scene
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| project(p, i, camera).map(|s| (s, p.opacity)))
        .collect();
    projected.sort_by(|(a, _), (b, _)| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.primitive_index.cmp(&b.primitive_index))
    });

    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let mut splats = Vec::with_capacity(projected.len());
    let mut source = Vec::with_capacity(projected.len());
    let mut depth = Vec::with_capacity(projected.len());
    for (slot, (s, opacity)) in projected.into_iter().enumerate() {
        let [x0, x1, y0, y1] = s.pixel_rect;
        for ty in (y0 as usize / tile_size)..=((y1 as usize - 1) / tile_size) {
            for tx in (x0 as usize / tile_size)..=((x1 as usize - 1) / tile_size) {
                tiles[ty * tiles_x + tx].push(slot as u32);
            }
        }
        let conic = s.conic();
        splats.push(Splat {
            mean: s.mean2d.map(T::lit),
            conic: conic.map(T::lit),
            opacity: T::from_f32(opacity),
            rect: s.pixel_rect,
        });
        source.push(s.primitive_index);
        depth.push(s.depth);
    }
    Binned {
        splats,
        source,
        depth,
        tiles,
        tiles_x,
        tile_size,
        width,
        height,
    }
}

struct Composite<T> {
    accum: Vec<T>,
    alpha: Vec<T>,
    transmittance: Vec<T>,
}

struct TileOut<T> {
    origin: (usize, usize),
    size: (usize, usize),
    accum: Vec<T>,
    alpha: Vec<T>,
    transmittance: Vec<T>,
}

/// Composites `values` (one row of `channels` per splat, in binned order).
fn composite<T: Real>(binned: &Binned<T>, channels: usize, values: &[T]) -> Composite<T> {
    let ts = binned.tile_size;
    let (width, height) = (binned.width, binned.height);
    let alpha_max = T::lit(ALPHA_MAX);
    let alpha_min = T::lit(ALPHA_MIN);
    let t_min = T::lit(TRANSMITTANCE_MIN);
    let half = T::lit(0.5);

    let tile_outs: Vec<TileOut<T>> = binned
        .tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let ox = (tile % binned.tiles_x) * ts;
            let oy = (tile / binned.tiles_x) * ts;
            let tw = ts.min(width - ox);
            let th = ts.min(height - oy);
            let mut accum = vec![T::zero(); tw * th * channels];
            let mut alpha = vec![T::zero(); tw * th];
            let mut transmittance = vec![T::one(); tw * th];
            for ly in 0..th {
                let py = (oy + ly) as u32;
                let cy = T::lit(py as f64) + half;
                for lx in 0..tw {
                    let px = (ox + lx) as u32;
                    let cx = T::lit(px as f64) + half;
                    let local = ly * tw + lx;
                    let acc = &mut accum[local * channels..(local + 1) * channels];
                    let mut t = T::one();
                    let mut a_sum = T::zero();
                    for &slot in list {
                        let s = &binned.splats[slot as usize];
                        let [x0, x1, y0, y1] = s.rect;
                        if px < x0 || px >= x1 || py < y0 || py >= y1 {
                            continue;
                        }
                        let dx = cx - s.mean[0];
                        let dy = cy - s.mean[1];
                        let power = -half
                            * (s.conic[0] * dx * dx
                                + T::lit(2.0) * s.conic[1] * dx * dy
                                + s.conic[2] * dy * dy);
                        let a = (s.opacity * power.exp()).min(alpha_max);
                        if a < alpha_min {
                            continue;
                        }
                        let w = t * a;
                        let row = &values[slot as usize * channels..(slot as usize + 1) * channels];
                        for (o, &v) in acc.iter_mut().zip(row) {
                            *o += w * v;
                        }
                        a_sum += w;
                        t *= T::one() - a;
                        if t < t_min {
                            break;
                        }
                    }
                    alpha[local] = a_sum;
                    transmittance[local] = t;
                }
            }
            TileOut {
                origin: (ox, oy),
                size: (tw, th),
                accum,
                alpha,
                transmittance,
            }
        })
        .collect();

    let mut out = Composite {
        accum: vec![T::zero(); width * height * channels],
        alpha: vec![T::zero(); width * height],
        transmittance: vec![T::one(); width * height],
    };
    for tile in tile_outs {
        let (ox, oy) = tile.origin;
        let (tw, th) = tile.size;
        for ly in 0..th {
            let dst = (oy + ly) * width + ox;
            let src = ly * tw;
            out.alpha[dst..dst + tw].copy_from_slice(&tile.alpha[src..src + tw]);
            out.transmittance[dst..dst + tw].copy_from_slice(&tile.transmittance[src..src + tw]);
            out.accum[dst * channels..(dst + tw) * channels]
                .copy_from_slice(&tile.accum[src * channels..(src + tw) * channels]);
        }
    }
    out
}

/// Renders color, depth, accumulated alpha and the K per-atom weight maps
/// in a single compositing pass.
pub fn render<T: Real>(
    scene: &Scene,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<RenderOutput<T>, RenderError> {
    check_inputs(scene, camera)?;
    options.install(|| {
        let binned = bin::<T>(scene, camera, options.tile_size);
        let k = scene.k();
        let channels = 4 + k;
        let mut values = Vec::with_capacity(binned.splats.len() * channels);
        for (&src, &depth) in binned.source.iter().zip(&binned.depth) {
            let p = &scene.primitives[src];
            values.extend(p.color.iter().map(|&c| T::from_f32(c)));
            values.push(T::lit(depth));
            values.extend(p.weights.iter().map(|&w| T::from_f32(w)));
        }
        let comp = composite(&binned, channels, &values);
        let pixels = binned.width * binned.height;
        let mut rgb = Vec::with_capacity(pixels * 3);
        let mut depth = Vec::with_capacity(pixels);
        let mut weights = Vec::with_capacity(pixels * k);
        for px in comp.accum.chunks_exact(channels) {
            rgb.extend_from_slice(&px[..3]);
            depth.push(px[3]);
            weights.extend_from_slice(&px[4..]);
        }
        RenderOutput {
            width: binned.width,
            height: binned.height,
            rgb,
            depth,
            alpha: comp.alpha,
            transmittance: comp.transmittance,
            weight_maps: WeightMapStack {
                width: binned.width,
                height: binned.height,
                k,
                data: weights,
            },
        }
    })
}

/// Feature-first rendering: materializes each primitive's C-dim feature and
/// composites it directly. Equal to `assemble_features(render(..).weight_maps)`
/// up to rounding, at C/K times the per-fragment cost.
pub fn render_features_direct<T: Real>(
    scene: &Scene,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<FeatureImage<T>, RenderError> {
    check_inputs(scene, camera)?;
    options.install(|| {
        let binned = bin::<T>(scene, camera, options.tile_size);
        let c = scene.c();
        let atoms: Vec<T> = scene.dictionary.as_slice().iter().map(|&v| T::from_f32(v)).collect();
        let mut values = vec![T::zero(); binned.splats.len() * c];
        values
            .par_chunks_mut(c)
            .zip(binned.source.par_iter())
            .for_each(|(f, &src)| {
                for (k, &w) in scene.primitives[src].weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let w = T::from_f32(w);
                    for (o, &d) in f.iter_mut().zip(&atoms[k * c..(k + 1) * c]) {
                        *o += w * d;
                    }
                }
            });
        let comp = composite(&binned, c, &values);
        FeatureImage {
            width: binned.width,
            height: binned.height,
            c,
            data: comp.accum,
        }
    })
}

/// `F_p = D W(p)` at every pixel.
pub fn assemble_features<T: Real>(
    weight_maps: &WeightMapStack<T>,
    dictionary: &SemanticDictionary,
) -> Result<FeatureImage<T>, RenderError> {
    let k = dictionary.k();
    if weight_maps.k != k {
        return Err(RenderError::KMismatch {
            stack: weight_maps.k,
            dictionary: k,
        });
    }
    let c = dictionary.c();
    let atoms: Vec<T> = dictionary.as_slice().iter().map(|&v| T::from_f32(v)).collect();
    let pixels = weight_maps.width * weight_maps.height;
    let mut data = vec![T::zero(); pixels * c];
    if c > 0 && k > 0 {
        data.par_chunks_mut(c)
            .zip(weight_maps.data.par_chunks(k))
            .for_each(|(f, w)| {
                for (kk, &wk) in w.iter().enumerate() {
                    if wk == T::zero() {
                        continue;
                    }
                    for (o, &d) in f.iter_mut().zip(&atoms[kk * c..(kk + 1) * c]) {
                        *o += wk * d;
                    }
                }
            });
    }
    Ok(FeatureImage {
        width: weight_maps.width,
        height: weight_maps.height,
        c,
        data,
    })
}
