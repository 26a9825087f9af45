//! Deterministic stand-ins for the mask generator, propagator and embedder,
//! and a synthetic sequence of moving rectangles to drive them.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Frame, Mask, MaskGenerator, MaskPropagator, PixelEmbedder};

const COLORS: [[u8; 3]; 3] = [[220, 40, 40], [40, 200, 60], [50, 80, 230]];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Frame at which a third rectangle enters, if any.
    pub third_object_frame: Option<usize>,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 48,
            frames: 10,
            third_object_frame: None,
        }
    }
}

/// Two rectangles drifting across a black background, plus an optional
/// third one that appears at `third_object_frame`. Rectangles never touch.
pub fn moving_rectangles(spec: &SequenceSpec) -> Vec<Frame> {
    let (w, h) = (spec.width, spec.height);
    (0..spec.frames)
        .map(|t| {
            let mut rgb = vec![0u8; 3 * w * h];
            let ti = t as i64;
            let (wi, hi) = (w as i64, h as i64);
            let mut rects = vec![
                (0, [2 + ti, 2, 2 + ti + wi / 5, 2 + hi / 4]),
                (1, [wi / 2, hi / 2 + ti / 2, wi / 2 + wi / 6, hi / 2 + ti / 2 + hi / 5]),
            ];
            if spec.third_object_frame.is_some_and(|f| t >= f) {
                rects.push((2, [wi - wi / 6 - 2, 2, wi - 2, 2 + hi / 5]));
            }
            for (c, [x0, y0, x1, y1]) in rects {
                let m = Mask::rect(w, h, x0, y0, x1, y1);
                for (p, _) in m.bits.iter().enumerate().filter(|(_, &b)| b) {
                    rgb[3 * p..3 * p + 3].copy_from_slice(&COLORS[c]);
                }
            }
            Frame {
                index: t,
                width: w,
                height: h,
                rgb,
            }
        })
        .collect()
}

fn color_mask(frame: &Frame, color: [u8; 3]) -> Mask {
    Mask {
        width: frame.width,
        height: frame.height,
        bits: (0..frame.pixels()).map(|p| frame.pixel(p) == color).collect(),
    }
}

/// One mask per distinct non-black color, each emitted twice: once as the
/// color region and once as its bounding box (a redundant proposal).
#[derive(Debug, Default, Clone)]
pub struct ColorComponentGenerator;

impl MaskGenerator for ColorComponentGenerator {
    fn name(&self) -> &str {
        "color-components"
    }

    fn generate(&mut self, frame: &Frame) -> Result<Vec<Mask>, String> {
        let colors: BTreeSet<[u8; 3]> = (0..frame.pixels())
            .map(|p| frame.pixel(p))
            .filter(|&c| c != [0, 0, 0])
            .collect();
        let mut out = Vec::new();
        for c in colors {
            let m = color_mask(frame, c);
            if let Some([x0, y0, x1, y1]) = m.bbox() {
                let bbox = Mask::rect(
                    frame.width,
                    frame.height,
                    x0 as i64,
                    y0 as i64,
                    x1 as i64,
                    y1 as i64,
                );
                out.push(m);
                out.push(bbox);
            }
        }
        Ok(out)
    }
}

fn dominant_color(frame: &Frame, mask: &Mask) -> Option<[u8; 3]> {
    let mut counts: std::collections::BTreeMap<[u8; 3], usize> = Default::default();
    for (p, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        *counts.entry(frame.pixel(p)).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|(c, _)| *c != [0, 0, 0])
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c)
}

/// Follows each object by the dominant color under its mask.
#[derive(Debug, Default, Clone)]
pub struct ColorTrackPropagator;

impl MaskPropagator for ColorTrackPropagator {
    fn name(&self) -> &str {
        "color-track"
    }

    fn propagate(
        &mut self,
        objects: &[(u32, Mask)],
        from: &Frame,
        to: &Frame,
    ) -> Result<Vec<(u32, Mask)>, String> {
        Ok(objects
            .iter()
            .filter_map(|(id, m)| dominant_color(from, m).map(|c| (*id, color_mask(to, c))))
            .collect())
    }
}

/// Unit feature from a fixed random projection of the region's mean color.
#[derive(Debug, Clone)]
pub struct ColorEmbedder {
    projection: Vec<[f64; 4]>,
}

impl ColorEmbedder {
    pub fn new(c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            projection: (0..c)
                .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
                .collect(),
        }
    }
}

impl PixelEmbedder for ColorEmbedder {
    fn name(&self) -> &str {
        "color-embedder"
    }

    fn dim(&self) -> usize {
        self.projection.len()
    }

    fn embed(&self, frame: &Frame, mask: &Mask) -> Result<Vec<f32>, String> {
        let mut sum = [0.0f64; 3];
        let mut n = 0usize;
        for (p, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
            let c = frame.pixel(p);
            (0..3).for_each(|i| sum[i] += c[i] as f64 / 255.0);
            n += 1;
        }
        if n == 0 {
            return Err("empty mask".into());
        }
        let x = [sum[0] / n as f64, sum[1] / n as f64, sum[2] / n as f64, 1.0];
        let f: Vec<f64> = self
            .projection
            .iter()
            .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect();
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(f.iter().map(|v| (v / norm) as f32).collect())
    }
}

/// Returns the same feature for every region.
#[derive(Debug, Clone)]
pub struct ConstantEmbedder {
    pub feature: Vec<f32>,
}

impl PixelEmbedder for ConstantEmbedder {
    fn name(&self) -> &str {
        "constant-embedder"
    }

    fn dim(&self) -> usize {
        self.feature.len()
    }

    fn embed(&self, _: &Frame, _: &Mask) -> Result<Vec<f32>, String> {
        Ok(self.feature.clone())
    }
}
