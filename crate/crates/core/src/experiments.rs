//! End-to-end runs on synthetic data: the toy grouping-to-segmentation loop
//! and the dictionary-size sweep.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Camera;
use crate::eval::{miou_accuracy, open_vocab_segment, EvalError, LabelImage, ALPHA_FLOOR};
use crate::grouping::{
    filter_and_normalize, forward_grouping, hungarian_match, masks_from_labels, matched_miou,
    sample_weights, synthetic_region_field, train_toy, CameraLocator, GroupingError, TrainConfig,
    TAU_EXIST,
};
use crate::lfa::{
    aggregate_initial, train_refinement, LanguageFeatureMap, LfaError, RefineConfig,
    SupervisionBundle, AGGREGATE_EPS,
};
use crate::raster::{assemble_features, render, render_features_direct, RenderError, RenderOptions};
use crate::scene::{
    make_synthetic_scene, region_of_x, synthetic_camera, validate_scene, Scene, SceneError,
    SemanticDictionary, SynthError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Lfa(#[from] LfaError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("assembled scene failed validation: {0}")]
    Invalid(String),
}

/// Region label of every pixel, found by intersecting its ray with the
/// z = 0 plane the synthetic grid lives in. `None` marks rays that miss.
pub fn plane_region_labels(camera: &Camera, n_regions: usize) -> Vec<Option<usize>> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    (0..w * h)
        .map(|p| {
            let (u, v) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
            let (o, d) = camera.ray(u, v);
            if d.z.abs() < 1e-12 {
                return None;
            }
            let t = -o.z / d.z;
            if t <= 0.0 {
                return None;
            }
            Some(region_of_x((o.x + t * d.x) as f32, n_regions))
        })
        .collect()
}

/// With the synthetic camera a width that is a multiple of 48 puts the
/// 4-strip boundaries on pixel edges, so no pixel center sits on a boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub seed: u64,
    pub n_primitives: usize,
    pub c: usize,
    pub regions: usize,
    /// Source view resolution; the field has one location per pixel.
    pub field_resolution: u32,
    pub eval_resolution: u32,
    pub field_dim: usize,
    pub field_noise: f64,
    pub language_noise: f64,
    pub tau_exist: f64,
    pub train: TrainConfig,
    pub refine: RefineConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_primitives: 4096,
            c: 16,
            regions: 4,
            field_resolution: 48,
            eval_resolution: 96,
            field_dim: 64,
            field_noise: 0.5,
            language_noise: 0.1,
            tau_exist: TAU_EXIST,
            train: TrainConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyReport {
    /// Groups that survived the existence filter.
    pub groups: usize,
    /// Matched-mask mIoU of the grouping head against the region masks.
    pub grouping_miou: f64,
    /// Fraction of primitives whose strongest sampled weight is their region.
    pub weight_agreement: f64,
    pub unlocated: usize,
    /// Pixel accuracy of text-query segmentation on alpha-valid pixels.
    pub segmentation_accuracy: f64,
    pub segmentation_miou: f64,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
}

fn pixel_grid_positions(scene: &Scene) -> Vec<[f32; 3]> {
    scene.primitives.iter().map(|p| p.position).collect()
}

/// Trains the grouping head on a field rendered from the synthetic scene's
/// source view, samples primitive weights from its groups, pools and refines
/// atoms from a language map, and segments a render of the rebuilt scene.
pub fn toy_end_to_end(config: &ToyConfig) -> Result<(ToyReport, Scene), ExperimentError> {
    let source = make_synthetic_scene(config.seed, config.n_primitives, config.regions, config.c, config.regions)?;
    let cam = synthetic_camera(config.field_resolution, config.field_resolution);
    let labels: Vec<usize> = plane_region_labels(&cam, config.regions)
        .into_iter()
        .map(|l| l.unwrap_or(0))
        .collect();
    let field = synthetic_region_field(&labels, config.regions, config.field_dim, config.field_noise, config.seed)?;
    let dense = synthetic_region_field(&labels, config.regions, config.field_dim, 0.0, config.seed)?;
    let gt = masks_from_labels(&labels, config.regions);

    let trained = train_toy(&field, &gt, Some(&dense.features), &config.train)?;
    let pred = forward_grouping(&field, &trained.bank, &trained.params)?;
    let groups = filter_and_normalize(&pred, config.tau_exist)?;
    let hard = groups.hard_masks();
    let grouping_miou = matched_miou(&hard, &gt);

    // Group -> region by maximum overlap.
    let mut cost = Array2::zeros((groups.k(), config.regions));
    for (g, row) in hard.axis_iter(Axis(0)).enumerate() {
        for (r, gtr) in gt.axis_iter(Axis(0)).enumerate() {
            cost[(g, r)] = -row.dot(&gtr);
        }
    }
    let matching = hungarian_match(&cost)?;

    let positions = pixel_grid_positions(&source);
    let sampled = sample_weights(&groups, &positions, &CameraLocator { camera: cam.clone() })?;
    let mut agree = 0usize;
    for (w, p) in sampled.weights.iter().zip(&positions) {
        let best = (0..w.len()).fold(0, |b, k| if w[k] > w[b] { k } else { b });
        if matching.col_of(best) == Some(region_of_x(p[0], config.regions)) {
            agree += 1;
        }
    }
    let weight_agreement = agree as f64 / positions.len().max(1) as f64;

    let vocab = &source.vocabulary;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let lang = LanguageFeatureMap {
        features: Array2::from_shape_fn((labels.len(), config.c), |(s, j)| {
            let n: f64 = StandardNormal.sample(&mut rng);
            vocab.entries()[labels[s]].embedding[j] as f64 + config.language_noise * n
        }),
    };
    let initial = aggregate_initial(&groups, &lang, AGGREGATE_EPS)?;
    let mut gt_features = initial.clone();
    let mut text = initial.clone();
    let mut text_mask = vec![false; groups.k()];
    for &(g, r) in &matching.pairs {
        let e = Array2::from_shape_fn((1, config.c), |(_, j)| vocab.entries()[r].embedding[j] as f64);
        gt_features.row_mut(g).assign(&e.row(0));
        text.row_mut(g).assign(&e.row(0));
        text_mask[g] = true;
    }
    let bundle = SupervisionBundle {
        gt_features,
        text_embeddings: Some(text),
        text_mask,
    };
    let refined = train_refinement(&initial, &lang, &bundle, &config.refine)?;

    let k = groups.k();
    let mut scene = source.clone();
    scene.dictionary = SemanticDictionary::normalized(
        k,
        config.c,
        refined.refined.iter().map(|&v| v as f32).collect(),
    )?;
    for (prim, w) in scene.primitives.iter_mut().zip(&sampled.weights) {
        let sum: f64 = w.iter().sum();
        prim.weights = w.iter().map(|&v| (v / sum) as f32).collect();
    }
    scene.metadata.insert("generator".into(), "toy-end-to-end".into());
    let report = validate_scene(&scene);
    if !report.is_clean() {
        return Err(ExperimentError::Invalid(format!("{:?}", report.issues.first())));
    }

    let eval_cam = synthetic_camera(config.eval_resolution, config.eval_resolution);
    let out = render::<f64>(&scene, &eval_cam, &RenderOptions::default())?;
    let features = assemble_features(&out.weight_maps, &scene.dictionary)?;
    let pred_labels = open_vocab_segment(&features, &scene.vocabulary, &out.alpha, ALPHA_FLOOR)?;
    let gt_labels = alpha_masked_labels(&eval_cam, config.regions, &out.alpha);
    let seg = miou_accuracy(&pred_labels, &gt_labels)?;

    Ok((
        ToyReport {
            groups: k,
            grouping_miou,
            weight_agreement,
            unlocated: sampled.unlocated.len(),
            segmentation_accuracy: seg.accuracy,
            segmentation_miou: seg.miou,
            final_loss: trained.trace.last().map(|r| r.total).unwrap_or(f64::NAN),
            loss_trace: trained.trace.iter().map(|r| r.total).collect(),
        },
        scene,
    ))
}

/// Ground-truth region labels, -1 where the render's alpha is below the
/// segmentation floor.
pub fn alpha_masked_labels(camera: &Camera, n_regions: usize, alpha: &[f64]) -> LabelImage {
    let labels = plane_region_labels(camera, n_regions)
        .into_iter()
        .zip(alpha)
        .map(|(l, &a)| match l {
            Some(r) if a >= ALPHA_FLOOR => r as i32,
            _ => -1,
        })
        .collect();
    LabelImage {
        width: camera.width as usize,
        height: camera.height as usize,
        labels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub miou: f64,
    pub accuracy: f64,
    /// Largest weight-first vs feature-first difference over the cameras.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweep {
    pub rows: Vec<KSweepRow>,
}

impl KSweep {
    /// Metrics as rows, one column per K.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "Metric");
        for r in &self.rows {
            let _ = write!(out, "{:>10}", format!("K={}", r.k));
        }
        out.push('\n');
        for (name, get) in [
            ("mIoU", (|r: &KSweepRow| r.miou) as fn(&KSweepRow) -> f64),
            ("Acc.", |r: &KSweepRow| r.accuracy),
        ] {
            let _ = write!(out, "{name:<8}");
            for r in &self.rows {
                let _ = write!(out, "{:>10.4}", get(r));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepConfig {
    pub ks: Vec<usize>,
    pub seed: u64,
    pub n_primitives: usize,
    pub c: usize,
    pub resolution: u32,
    pub cameras: usize,
}

impl Default for KSweepConfig {
    fn default() -> Self {
        Self {
            ks: vec![4, 8, 16, 32],
            seed: 0,
            n_primitives: 4096,
            c: 64,
            resolution: 192,
            cameras: 3,
        }
    }
}

/// For each K: a synthetic scene with K regions, the equivalence check of
/// both feature paths over a few orbit views (f32), and text-query
/// segmentation scored against the region map from the frontal view.
pub fn k_sweep(config: &KSweepConfig) -> Result<KSweep, ExperimentError> {
    let opts = RenderOptions::default();
    let mut rows = Vec::with_capacity(config.ks.len());
    for &k in &config.ks {
        let scene = make_synthetic_scene(config.seed, config.n_primitives, k, config.c, k)?;
        let mut max_deviation = 0.0f64;
        for i in 0..config.cameras {
            let az = -0.4 + 0.8 * i as f64 / config.cameras.max(2).saturating_sub(1) as f64;
            let cam = Camera::orbit(
                az,
                0.15,
                3.0,
                nalgebra::Vector3::zeros(),
                2.0 * (1.2f64 / 3.0).atan(),
                config.resolution,
                config.resolution,
            )
            .expect("positive radius");
            let out = render::<f32>(&scene, &cam, &opts)?;
            let weight_first = assemble_features(&out.weight_maps, &scene.dictionary)?;
            let direct = render_features_direct::<f32>(&scene, &cam, &opts)?;
            let dev = weight_first.max_abs_diff(&direct).expect("same shape");
            max_deviation = max_deviation.max(dev);
        }
        let cam = synthetic_camera(config.resolution, config.resolution);
        let out = render::<f64>(&scene, &cam, &opts)?;
        let features = assemble_features(&out.weight_maps, &scene.dictionary)?;
        let pred = open_vocab_segment(&features, &scene.vocabulary, &out.alpha, ALPHA_FLOOR)?;
        let gt = alpha_masked_labels(&cam, k, &out.alpha);
        let s = miou_accuracy(&pred, &gt)?;
        rows.push(KSweepRow {
            k,
            miou: s.miou,
            accuracy: s.accuracy,
            max_deviation,
        });
    }
    Ok(KSweep { rows })
}
