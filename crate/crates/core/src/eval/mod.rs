//! Open-vocabulary segmentation of rendered feature images and the
//! segmentation and image-quality metrics.

mod quality;
mod report;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::raster::FeatureImage;
use crate::real::Real;
use crate::scene::VocabularyTable;

pub use quality::{psnr, ssim, Image, PSNR_CAP};
pub use report::{heatmap_png, read_label_png, write_label_png, LabelPngError, MetricReport};

pub const ALPHA_FLOOR: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("feature width {features} does not match embedding width {embedding}")]
    Width { features: usize, embedding: usize },
    #[error("size mismatch: {0}")]
    Size(String),
    #[error("term embedding has zero norm")]
    ZeroEmbedding,
    #[error("no pixel has a ground-truth label")]
    NoValidPixels,
}

/// Per-pixel class indices; -1 marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<i32>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, labels: Vec<i32>) -> Result<Self, EvalError> {
        if labels.len() != width * height {
            return Err(EvalError::Size(format!(
                "{} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }
}

fn check_alpha<T>(features: &FeatureImage<T>, alpha: &[T]) -> Result<(), EvalError> {
    if alpha.len() != features.width * features.height {
        return Err(EvalError::Size(format!(
            "alpha has {} pixels, features {}x{}",
            alpha.len(),
            features.width,
            features.height
        )));
    }
    Ok(())
}

/// Cosine similarity to `term` at every pixel; -1 where alpha is below
/// `alpha_floor`.
pub fn similarity_heatmap<T: Real>(
    features: &FeatureImage<T>,
    term: &[f32],
    alpha: &[T],
    alpha_floor: f64,
) -> Result<Vec<f64>, EvalError> {
    check_alpha(features, alpha)?;
    if term.len() != features.c {
        return Err(EvalError::Width {
            features: features.c,
            embedding: term.len(),
        });
    }
    let tnorm = term.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if tnorm == 0.0 {
        return Err(EvalError::ZeroEmbedding);
    }
    Ok((0..alpha.len())
        .map(|p| {
            if alpha[p].as_f64() < alpha_floor {
                return -1.0;
            }
            cosine_to(features.pixel(p), term, tnorm)
        })
        .collect())
}

fn cosine_to<T: Real>(f: &[T], term: &[f32], tnorm: f64) -> f64 {
    let mut dot = 0.0;
    let mut ff = 0.0;
    for (&a, &b) in f.iter().zip(term) {
        let a = a.as_f64();
        dot += a * b as f64;
        ff += a * a;
    }
    if ff == 0.0 {
        0.0
    } else {
        dot / (ff.sqrt() * tnorm)
    }
}

/// Labels each pixel with the vocabulary term of highest cosine similarity.
/// Ties go to the lowest term index; pixels below `alpha_floor` get -1.
pub fn open_vocab_segment<T: Real>(
    features: &FeatureImage<T>,
    vocab: &VocabularyTable,
    alpha: &[T],
    alpha_floor: f64,
) -> Result<LabelImage, EvalError> {
    if vocab.is_empty() {
        return Err(EvalError::EmptyVocabulary);
    }
    check_alpha(features, alpha)?;
    let terms: Vec<(&[f32], f64)> = vocab
        .entries()
        .iter()
        .map(|e| {
            let n = e.embedding.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            (e.embedding.as_slice(), n)
        })
        .collect();
    if terms[0].0.len() != features.c {
        return Err(EvalError::Width {
            features: features.c,
            embedding: terms[0].0.len(),
        });
    }
    let labels = (0..alpha.len())
        .map(|p| {
            if alpha[p].as_f64() < alpha_floor {
                return -1;
            }
            let f = features.pixel(p);
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (i, &(t, n)) in terms.iter().enumerate() {
                let s = cosine_to(f, t, n);
                if s > best_sim {
                    best_sim = s;
                    best = i;
                }
            }
            best as i32
        })
        .collect();
    LabelImage::new(features.width, features.height, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationScores {
    pub miou: f64,
    pub accuracy: f64,
    /// IoU for every class present in the ground truth.
    pub per_class: BTreeMap<i32, f64>,
}

/// mIoU over classes present in `gt` and pixel accuracy, ignoring pixels
/// where `gt` is -1.
pub fn miou_accuracy(pred: &LabelImage, gt: &LabelImage) -> Result<SegmentationScores, EvalError> {
    if pred.labels.len() != gt.labels.len() || pred.width != gt.width {
        return Err(EvalError::Size(format!(
            "prediction {}x{}, ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut inter: BTreeMap<i32, u64> = BTreeMap::new();
    let mut gt_count: BTreeMap<i32, u64> = BTreeMap::new();
    let mut pred_count: BTreeMap<i32, u64> = BTreeMap::new();
    let mut valid = 0u64;
    let mut correct = 0u64;
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if g < 0 {
            continue;
        }
        valid += 1;
        *gt_count.entry(g).or_default() += 1;
        *pred_count.entry(p).or_default() += 1;
        if p == g {
            correct += 1;
            *inter.entry(g).or_default() += 1;
        }
    }
    if valid == 0 {
        return Err(EvalError::NoValidPixels);
    }
    let per_class: BTreeMap<i32, f64> = gt_count
        .iter()
        .map(|(&c, &g)| {
            let i = inter.get(&c).copied().unwrap_or(0);
            let p = pred_count.get(&c).copied().unwrap_or(0);
            (c, i as f64 / (g + p - i) as f64)
        })
        .collect();
    let miou = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(SegmentationScores {
        miou,
        accuracy: correct as f64 / valid as f64,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> VocabularyTable {
        let mut v = VocabularyTable::new();
        v.push("a", vec![1.0, 0.0, 0.0]).unwrap();
        v.push("b", vec![0.0, 1.0, 0.0]).unwrap();
        v.push("c", vec![0.0, 0.0, 1.0]).unwrap();
        v
    }

    fn image(w: usize, h: usize, f: impl FnMut(usize) -> [f64; 3]) -> FeatureImage<f64> {
        FeatureImage {
            width: w,
            height: h,
            c: 3,
            data: (0..w * h).flat_map(f).collect(),
        }
    }

    #[test]
    fn constant_term_everywhere() {
        let f = image(4, 3, |_| [0.0, 0.0, 0.4]);
        let seg = open_vocab_segment(&f, &vocab(), &[1.0; 12], ALPHA_FLOOR).unwrap();
        assert!(seg.labels.iter().all(|&l| l == 2));
    }

    #[test]
    fn transparent_pixels_unlabeled_and_ties_go_low() {
        let f = image(2, 1, |_| [1.0, 1.0, 0.0]);
        let seg = open_vocab_segment(&f, &vocab(), &[0.0, 0.9], ALPHA_FLOOR).unwrap();
        assert_eq!(seg.labels, vec![-1, 0]);
    }

    #[test]
    fn errors() {
        let f = image(1, 1, |_| [1.0, 0.0, 0.0]);
        assert_eq!(
            open_vocab_segment(&f, &VocabularyTable::new(), &[1.0], 0.5),
            Err(EvalError::EmptyVocabulary)
        );
        assert_eq!(
            similarity_heatmap(&f, &[0.0, 0.0, 0.0], &[1.0], 0.5),
            Err(EvalError::ZeroEmbedding)
        );
        assert!(similarity_heatmap(&f, &[1.0], &[1.0], 0.5).is_err());
    }

    #[test]
    fn heatmap_argmax_equals_segmentation_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = image(8, 8, |_| {
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
        });
        let alpha: Vec<f64> = (0..64).map(|i| (i % 5) as f64 / 4.0).collect();
        let v = vocab();
        let seg = open_vocab_segment(&f, &v, &alpha, ALPHA_FLOOR).unwrap();
        let maps: Vec<Vec<f64>> = v
            .entries()
            .iter()
            .map(|e| similarity_heatmap(&f, &e.embedding, &alpha, ALPHA_FLOOR).unwrap())
            .collect();
        for p in 0..64 {
            if alpha[p] < ALPHA_FLOOR {
                assert_eq!(seg.labels[p], -1);
                assert!(maps.iter().all(|m| m[p] == -1.0));
                continue;
            }
            let mut best = 0;
            for t in 1..3 {
                if maps[t][p] > maps[best][p] {
                    best = t;
                }
            }
            assert_eq!(seg.labels[p], best as i32);
        }
        let mut scaled = f.clone();
        for (i, v) in scaled.data.iter_mut().enumerate() {
            *v *= 0.1 + (i / 3) as f64;
        }
        assert_eq!(open_vocab_segment(&scaled, &v, &alpha, ALPHA_FLOOR).unwrap(), seg);
    }

    #[test]
    fn miou_closed_forms() {
        let gt = LabelImage::new(4, 1, vec![0, 0, 1, 1]).unwrap();
        let s = miou_accuracy(&gt, &gt).unwrap();
        assert_eq!((s.miou, s.accuracy), (1.0, 1.0));
        let constant = LabelImage::new(4, 1, vec![0; 4]).unwrap();
        let s = miou_accuracy(&constant, &gt).unwrap();
        assert_eq!((s.miou, s.accuracy), (0.25, 0.5));
        let none = LabelImage::new(4, 1, vec![-1; 4]).unwrap();
        assert_eq!(miou_accuracy(&gt, &none), Err(EvalError::NoValidPixels));
    }

    #[test]
    fn miou_matches_confusion_oracle_and_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 200;
            let gt: Vec<i32> = (0..n).map(|_| rng.random_range(-1..5)).collect();
            let pred: Vec<i32> = (0..n).map(|_| rng.random_range(0..5)).collect();
            let mut conf = [[0u64; 5]; 5];
            for i in 0..n {
                if gt[i] >= 0 {
                    conf[gt[i] as usize][pred[i] as usize] += 1;
                }
            }
            let mut ious = Vec::new();
            let mut correct = 0;
            let mut valid = 0;
            for c in 0..5 {
                let row: u64 = conf[c].iter().sum();
                if row == 0 {
                    continue;
                }
                let col: u64 = (0..5).map(|r| conf[r][c]).sum();
                ious.push(conf[c][c] as f64 / (row + col - conf[c][c]) as f64);
                correct += conf[c][c];
                valid += row;
            }
            let oracle = ious.iter().sum::<f64>() / ious.len() as f64;
            let a = LabelImage::new(n, 1, pred.clone()).unwrap();
            let b = LabelImage::new(n, 1, gt.clone()).unwrap();
            let s = miou_accuracy(&a, &b).unwrap();
            assert!((s.miou - oracle).abs() < 1e-12);
            assert_eq!(s.accuracy, correct as f64 / valid as f64);
            let perm = [3, 0, 4, 1, 2];
            let relabel = |v: &[i32]| -> Vec<i32> {
                v.iter().map(|&l| if l < 0 { l } else { perm[l as usize] }).collect()
            };
            let s2 = miou_accuracy(
                &LabelImage::new(n, 1, relabel(&pred)).unwrap(),
                &LabelImage::new(n, 1, relabel(&gt)).unwrap(),
            )
            .unwrap();
            assert!((s2.miou - s.miou).abs() < 1e-12);
            assert_eq!(s2.accuracy, s.accuracy);
        }
    }
}
