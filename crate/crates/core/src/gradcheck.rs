//! Central finite differences and the relative-error measure used to audit
//! every closed-form gradient in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{Mat, Tape};
use crate::grouping::{
    dice_loss, existence_loss, focal_loss, mse_dense_loss, sg_loss_and_grads, DenseFeatureField,
    HeadParams, QueryBank, SgLossConfig,
};
use crate::lfa::{
    lfa_loss_and_grads, loss_gt_alignment, loss_input_consistency, loss_text_alignment,
    LanguageFeatureMap, LfaLambdas, RefineParams, SupervisionBundle,
};

/// Central differences of `f` at `x`, every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let coords: Vec<usize> = (0..x.len()).collect();
    central_difference_at(f, x, h, &coords)
}

/// Central differences of `f` at `x` for the listed coordinates only.
pub fn central_difference_at(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    h: f64,
    coords: &[usize],
) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max|a - n| / max(max|a|, max|n|)`, scale-relative so that tiny
/// components do not dominate. Zero when both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}


/// Default gate on the relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Gate used when the caller asks for the strict double-precision check.
pub const STRICT_TOLERANCE: f64 = 1e-6;

/// One analytic gradient audited by [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GradCheck {
    Focal,
    Dice,
    Existence,
    Mse,
    InputConsistency,
    GtAlignment,
    TextAlignment,
    SemanticGrouping,
    Aggregation,
    Attention,
}

impl GradCheck {
    pub const ALL: [GradCheck; 10] = [
        GradCheck::Focal,
        GradCheck::Dice,
        GradCheck::Existence,
        GradCheck::Mse,
        GradCheck::InputConsistency,
        GradCheck::GtAlignment,
        GradCheck::TextAlignment,
        GradCheck::SemanticGrouping,
        GradCheck::Aggregation,
        GradCheck::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradCheck::Focal => "focal",
            GradCheck::Dice => "dice",
            GradCheck::Existence => "exist",
            GradCheck::Mse => "mse",
            GradCheck::InputConsistency => "lfa_input",
            GradCheck::GtAlignment => "lfa_gt",
            GradCheck::TextAlignment => "lfa_text",
            GradCheck::SemanticGrouping => "sg_total_through_head",
            GradCheck::Aggregation => "lfa_total_through_refinement",
            GradCheck::Attention => "attention_stack",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Finite-difference step.
    pub step: f64,
    /// Negate every analytic gradient before comparing. The suite must then
    /// fail; used as a negative control.
    pub sign_flip: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
            step: 1e-6,
            sign_flip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: GradCheck,
    pub name: &'static str,
    pub instances: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Runs every check in [`GradCheck::ALL`].
pub fn run_suite(config: &SuiteConfig) -> Vec<CheckResult> {
    GradCheck::ALL.iter().map(|&c| run_check(c, config)).collect()
}

/// Worst relative error of `check` over `config.instances` random instances.
/// Instances are seeded independently so the result does not depend on the
/// thread count.
pub fn run_check(check: GradCheck, config: &SuiteConfig) -> CheckResult {
    let errors: Vec<f64> = (0..config.instances)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed ^ ((check as u64) << 40) ^ (i as u64).wrapping_mul(0x9e37_79b9);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut analytic, numeric) = instance(check, &mut rng, config.step);
            if config.sign_flip {
                analytic.iter_mut().for_each(|v| *v = -*v);
            }
            let e = relative_error(&analytic, &numeric);
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .collect();
    let max = errors.into_iter().fold(0.0, f64::max);
    CheckResult {
        check,
        name: check.name(),
        instances: config.instances,
        max_relative_error: max,
        passed: config.instances > 0 && max <= config.tolerance,
    }
}

fn flat(m: &Mat) -> Vec<f64> {
    m.iter().copied().collect()
}

fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Mat {
    Mat::from_shape_fn(shape, |_| StandardNormal.sample(rng))
}

fn probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.02..0.98)).collect()
}

fn binary(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0..2) as f64).collect()
}

/// Writes `values` into the tensors in order.
fn scatter(tensors: Vec<&mut Mat>, values: &[f64]) {
    let mut it = values.iter();
    for t in tensors {
        t.iter_mut().for_each(|v| *v = *it.next().expect("enough values"));
    }
}

fn gather<'a>(tensors: impl IntoIterator<Item = &'a Mat>) -> Vec<f64> {
    tensors.into_iter().flat_map(|t| t.iter().copied()).collect()
}

fn text_bundle(rng: &mut ChaCha8Rng, k: usize, c: usize) -> SupervisionBundle {
    let mut text_mask: Vec<bool> = (0..k).map(|_| rng.random_bool(0.6)).collect();
    text_mask[0] = true;
    SupervisionBundle {
        gt_features: normal(rng, (k, c)),
        text_embeddings: Some(normal(rng, (k, c))),
        text_mask,
    }
}

/// Analytic and numeric gradient of one random instance.
fn instance(check: GradCheck, rng: &mut ChaCha8Rng, h: f64) -> (Vec<f64>, Vec<f64>) {
    match check {
        GradCheck::Focal => {
            let n = rng.random_range(1..=64);
            let (p, t) = (probs(rng, n), binary(rng, n));
            let alpha = rng.random_range(0.1..0.9);
            let gamma = [0.0, 1.0, 2.0, rng.random_range(0.0..3.0)][rng.random_range(0..4)];
            let f = |x: &[f64]| focal_loss(x, &t, alpha, gamma).expect("valid focal input");
            (f(&p).grad, central_difference(|x| f(x).value, &p, h))
        }
        GradCheck::Dice => {
            let n = rng.random_range(1..=64);
            let (p, t) = (probs(rng, n), binary(rng, n));
            let f = |x: &[f64]| dice_loss(x, &t, 1.0).expect("valid dice input");
            (f(&p).grad, central_difference(|x| f(x).value, &p, h))
        }
        GradCheck::Existence => {
            let n = rng.random_range(1..=64);
            let p = probs(rng, n);
            let m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let f = |x: &[f64]| existence_loss(x, &m).expect("valid existence input");
            (f(&p).grad, central_difference(|x| f(x).value, &p, h))
        }
        GradCheck::Mse => {
            let shape = (rng.random_range(1..=16), rng.random_range(1..=8));
            let (x, t) = (normal(rng, shape), normal(rng, shape));
            let f = |v: &[f64]| {
                let m = Mat::from_shape_vec(shape, v.to_vec()).expect("shape");
                mse_dense_loss(&m, &t).expect("same shape")
            };
            (f(&flat(&x)).grad, central_difference(|v| f(v).value, &flat(&x), h))
        }
        GradCheck::InputConsistency => {
            let shape = (rng.random_range(1..=8), rng.random_range(2..=16));
            let (r, i) = (normal(rng, shape), normal(rng, shape));
            let n = r.len();
            let x: Vec<f64> = flat(&r).into_iter().chain(flat(&i)).collect();
            let f = |v: &[f64]| {
                let r = Mat::from_shape_vec(shape, v[..n].to_vec()).expect("shape");
                let i = Mat::from_shape_vec(shape, v[n..].to_vec()).expect("shape");
                loss_input_consistency(&r, &i).expect("same shape")
            };
            let t = f(&x);
            let analytic = flat(&t.grad_refined).into_iter().chain(flat(&t.grad_initial)).collect();
            (analytic, central_difference(|v| f(v).value, &x, h))
        }
        GradCheck::GtAlignment | GradCheck::TextAlignment => {
            let shape = (rng.random_range(1..=8), rng.random_range(2..=16));
            let r = normal(rng, shape);
            let bundle = text_bundle(rng, shape.0, shape.1);
            let f = |v: &[f64]| {
                let r = Mat::from_shape_vec(shape, v.to_vec()).expect("shape");
                if check == GradCheck::GtAlignment {
                    loss_gt_alignment(&r, &bundle).expect("valid bundle")
                } else {
                    loss_text_alignment(&r, &bundle).expect("valid bundle")
                }
            };
            (
                flat(&f(&flat(&r)).grad_refined),
                central_difference(|v| f(v).value, &flat(&r), h),
            )
        }
        GradCheck::SemanticGrouping => {
            let (s, d) = (rng.random_range(4..=12), rng.random_range(2..=6));
            let (n, g) = (rng.random_range(2..=5), rng.random_range(1..=3));
            let field = DenseFeatureField::new(normal(rng, (s, d))).expect("finite field");
            let target = normal(rng, (s, d));
            let gt = Mat::from_shape_fn((g, s), |(k, j)| (j % g == k) as u8 as f64);
            let mut params = HeadParams::init(d, 4, 1, 0.5, rng.random());
            for t in params.tensors_mut() {
                *t += &(normal(rng, t.dim()) * 0.1);
            }
            let bank = QueryBank::init(n, d, rng.random());
            let config = SgLossConfig::default();
            let eval = |v: &[f64]| {
                let (mut b, mut p) = (bank.clone(), params.clone());
                let k = gather(b.tensors()).len();
                scatter(b.tensors_mut(), &v[..k]);
                scatter(p.tensors_mut(), &v[k..]);
                sg_loss_and_grads(&field, &b, &p, &gt, Some(&target), &config)
                    .expect("valid head")
            };
            let x: Vec<f64> = gather(bank.tensors()).into_iter().chain(gather(params.tensors())).collect();
            let (_, gb, gp) = eval(&x);
            let analytic = gather(gb.tensors()).into_iter().chain(gather(gp.tensors())).collect();
            (analytic, central_difference(|v| eval(v).0.total, &x, h))
        }
        GradCheck::Aggregation => {
            let (k, c, s) = (rng.random_range(1..=5), rng.random_range(2..=8), rng.random_range(2..=10));
            let initial = normal(rng, (k, c));
            let lang = LanguageFeatureMap {
                features: normal(rng, (s, c)),
            };
            let bundle = text_bundle(rng, k, c);
            let mut params = RefineParams::init(c, 4, 2, 0.5, rng.random());
            for t in params.tensors_mut() {
                *t += &(normal(rng, t.dim()) * 0.1);
            }
            let lambdas = LfaLambdas::default();
            let eval = |v: &[f64]| {
                let mut p = params.clone();
                scatter(p.tensors_mut(), v);
                lfa_loss_and_grads(&initial, &lang, &p, &bundle, &lambdas).expect("valid refinement")
            };
            let x = gather(params.tensors());
            let (_, grads) = eval(&x);
            (gather(grads.tensors()), central_difference(|v| eval(v).0.total, &x, h))
        }
        GradCheck::Attention => {
            let d = rng.random_range(1..=8);
            let (nq, nk) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let shapes = [(nq, d), (nk, d), (nk, d), (d, d), (d, d), (d, d), (d, d)];
            let proj = normal(rng, (nq, d));
            let mats: Vec<Mat> = shapes.iter().map(|&s| normal(rng, s)).collect();
            let eval = |v: &[f64]| {
                let mut tape = Tape::new();
                let mut off = 0;
                let vars: Vec<_> = shapes
                    .iter()
                    .map(|&s| {
                        let len = s.0 * s.1;
                        let m = Mat::from_shape_vec(s, v[off..off + len].to_vec()).expect("shape");
                        off += len;
                        tape.leaf(m)
                    })
                    .collect();
                let a = tape.attention(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], vars[6]);
                let a = tape.tanh(a);
                let value = (tape.value(a) * &proj).sum();
                let out = tape.loss(a, value, proj.clone());
                (tape.scalar(out), tape.backward(out), vars)
            };
            let x = gather(&mats);
            let (_, grads, vars) = eval(&x);
            let analytic = vars.iter().flat_map(|&v| flat(&grads.get(v))).collect();
            (analytic, central_difference(|v| eval(v).0, &x, h))
        }
    }
}
