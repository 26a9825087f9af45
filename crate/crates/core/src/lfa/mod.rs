//! Language feature aggregation: pooling a dense language map into one atom
//! per group, refining the atoms by cross-attention, and the cosine losses
//! that supervise them.

mod refine;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grouping::GroupSet;

pub use refine::{
    lfa_loss_and_grads, refine_atoms, train_refinement, RefineConfig, RefineParams, RefinedAtoms,
};

pub const AGGREGATE_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LfaError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("text alignment requested but no text embeddings are available")]
    MissingText,
    #[error("loss weight {name} is negative ({value})")]
    NegativeLambda { name: &'static str, value: f64 },
    #[error("refinement diverged at step {0}")]
    Diverged(usize),
}

/// Dense per-location language features, S x C.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageFeatureMap {
    pub features: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomState {
    /// K x C pooled atoms.
    pub initial: Array2<f64>,
    /// K x C, set once refinement has run.
    pub refined: Option<Array2<f64>>,
}

/// Per-atom supervision: ground-truth features and optional text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionBundle {
    /// K x C
    pub gt_features: Array2<f64>,
    /// K x C
    pub text_embeddings: Option<Array2<f64>>,
    /// Which atoms have a text label.
    pub text_mask: Vec<bool>,
}

impl SupervisionBundle {
    pub fn without_text(gt_features: Array2<f64>) -> Self {
        let k = gt_features.nrows();
        Self {
            gt_features,
            text_embeddings: None,
            text_mask: vec![false; k],
        }
    }

    /// Text labels are available for this batch.
    pub fn has_text(&self) -> bool {
        self.text_embeddings.is_some() && self.text_mask.iter().any(|&m| m)
    }

    fn check(&self, k: usize, c: usize) -> Result<(), LfaError> {
        if self.gt_features.dim() != (k, c) {
            return Err(LfaError::Shape(format!(
                "gt features are {:?}, atoms are {:?}",
                self.gt_features.dim(),
                (k, c)
            )));
        }
        if self.text_mask.len() != k {
            return Err(LfaError::Shape("text mask length differs from atom count".into()));
        }
        if let Some(t) = &self.text_embeddings {
            if t.dim() != (k, c) {
                return Err(LfaError::Shape(format!(
                    "text embeddings are {:?}, atoms are {:?}",
                    t.dim(),
                    (k, c)
                )));
            }
        }
        Ok(())
    }
}

/// `d_k = Σ_x w_k(x) L(x) / (Σ_x w_k(x) + eps)`.
pub fn aggregate_initial(
    groups: &GroupSet,
    lang: &LanguageFeatureMap,
    eps: f64,
) -> Result<Array2<f64>, LfaError> {
    if groups.locations() != lang.features.nrows() {
        return Err(LfaError::Shape(format!(
            "groups cover {} locations, language map {}",
            groups.locations(),
            lang.features.nrows()
        )));
    }
    let mut atoms = groups.maps.dot(&lang.features);
    let mass = groups.maps.sum_axis(Axis(1));
    for (mut row, m) in atoms.axis_iter_mut(Axis(0)).zip(mass.iter()) {
        row /= m + eps;
    }
    Ok(atoms)
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// d/da of `1 - cos(a, b)`; zero when either vector vanishes.
fn one_minus_cos_grad(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Vec<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return vec![0.0; a.len()];
    }
    let c = a.dot(&b) / (na * nb);
    a.iter()
        .zip(b.iter())
        .map(|(&ai, &bi)| -(bi / (na * nb) - c * ai / (na * na)))
        .collect()
}

/// A loss value with gradients for the refined atoms and, where the loss
/// depends on them, the initial atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct LfaTerm {
    pub value: f64,
    pub grad_refined: Array2<f64>,
    pub grad_initial: Array2<f64>,
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<(), LfaError> {
    if a.dim() != b.dim() {
        return Err(LfaError::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `(1/N) Σ_n w_n (1 - cos(a_n, b_n))` with gradients for both sides.
fn weighted_cos_loss(a: &Array2<f64>, b: &Array2<f64>, weights: &[f64]) -> LfaTerm {
    let n = a.nrows().max(1) as f64;
    let mut value = 0.0;
    let mut ga = Array2::zeros(a.dim());
    let mut gb = Array2::zeros(b.dim());
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (ar, br) = (a.row(i), b.row(i));
        value += w * (1.0 - cosine(ar, br));
        for (j, g) in one_minus_cos_grad(ar, br).into_iter().enumerate() {
            ga[(i, j)] = w * g / n;
        }
        for (j, g) in one_minus_cos_grad(br, ar).into_iter().enumerate() {
            gb[(i, j)] = w * g / n;
        }
    }
    LfaTerm {
        value: value / n,
        grad_refined: ga,
        grad_initial: gb,
    }
}

/// `(1/N) Σ_n (1 - cos(d_n, d_n^0))`.
pub fn loss_input_consistency(
    refined: &Array2<f64>,
    initial: &Array2<f64>,
) -> Result<LfaTerm, LfaError> {
    same_shape(refined, initial, "refined vs initial")?;
    Ok(weighted_cos_loss(refined, initial, &vec![1.0; refined.nrows()]))
}

/// Adaptive weight per atom: `max(0, cos(g_n, t_n))` where a text label
/// exists, 1 otherwise.
pub fn adaptive_weights(bundle: &SupervisionBundle) -> Vec<f64> {
    (0..bundle.gt_features.nrows())
        .map(|n| match &bundle.text_embeddings {
            Some(t) if bundle.text_mask[n] => {
                cosine(bundle.gt_features.row(n), t.row(n)).max(0.0)
            }
            _ => 1.0,
        })
        .collect()
}

/// `(1/N) Σ_n w_n (1 - cos(d_n, g_n))`.
pub fn loss_gt_alignment(
    refined: &Array2<f64>,
    bundle: &SupervisionBundle,
) -> Result<LfaTerm, LfaError> {
    bundle.check(refined.nrows(), refined.ncols())?;
    let mut t = weighted_cos_loss(refined, &bundle.gt_features, &adaptive_weights(bundle));
    t.grad_initial.fill(0.0);
    Ok(t)
}

/// `(1/N) Σ_n (1 - cos(d_n, t_n))` over atoms with a text label.
pub fn loss_text_alignment(
    refined: &Array2<f64>,
    bundle: &SupervisionBundle,
) -> Result<LfaTerm, LfaError> {
    bundle.check(refined.nrows(), refined.ncols())?;
    let text = bundle.text_embeddings.as_ref().ok_or(LfaError::MissingText)?;
    let weights: Vec<f64> = bundle.text_mask.iter().map(|&m| m as u8 as f64).collect();
    let mut t = weighted_cos_loss(refined, text, &weights);
    t.grad_initial.fill(0.0);
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfaLambdas {
    pub input: f64,
    pub gt: f64,
    pub text: f64,
}

impl Default for LfaLambdas {
    fn default() -> Self {
        Self {
            input: 1.0,
            gt: 1.0,
            text: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LfaComponents {
    pub input: f64,
    pub gt: f64,
    /// 0 when the batch has no text labels.
    pub text: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfaLoss {
    pub components: LfaComponents,
    pub total: f64,
    pub grad_refined: Array2<f64>,
    pub grad_initial: Array2<f64>,
}

/// `λ_in L_in + λ_gt L_gt + 1[text] λ_text L_text`.
pub fn total_lfa_loss(
    refined: &Array2<f64>,
    initial: &Array2<f64>,
    bundle: &SupervisionBundle,
    lambdas: &LfaLambdas,
) -> Result<LfaLoss, LfaError> {
    for (name, value) in [("input", lambdas.input), ("gt", lambdas.gt), ("text", lambdas.text)] {
        if !(value >= 0.0) {
            return Err(LfaError::NegativeLambda { name, value });
        }
    }
    let l_in = loss_input_consistency(refined, initial)?;
    let l_gt = loss_gt_alignment(refined, bundle)?;
    let mut components = LfaComponents {
        input: l_in.value,
        gt: l_gt.value,
        text: 0.0,
    };
    let mut grad_refined = &l_in.grad_refined * lambdas.input + &l_gt.grad_refined * lambdas.gt;
    let grad_initial = &l_in.grad_initial * lambdas.input;
    let mut total = lambdas.input * l_in.value + lambdas.gt * l_gt.value;
    if bundle.has_text() {
        let l_text = loss_text_alignment(refined, bundle)?;
        components.text = l_text.value;
        total += lambdas.text * l_text.value;
        grad_refined.scaled_add(lambdas.text, &l_text.grad_refined);
    }
    Ok(LfaLoss {
        components,
        total,
        grad_refined,
        grad_initial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na.sqrt() * nb.sqrt())
        }
    }

    fn groups(maps: Array2<f64>) -> GroupSet {
        let k = maps.nrows();
        GroupSet {
            maps,
            kept_indices: (0..k).collect(),
        }
    }

    #[test]
    fn aggregate_constant_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let maps = random(&mut rng, 3, 50).mapv(|v| v.abs() + 0.1);
        let v = [0.3, -1.2, 2.0];
        let lang = LanguageFeatureMap {
            features: Array2::from_shape_fn((50, 3), |(_, j)| v[j]),
        };
        let atoms = aggregate_initial(&groups(maps.clone()), &lang, AGGREGATE_EPS).unwrap();
        for (k, row) in atoms.axis_iter(Axis(0)).enumerate() {
            let mass = maps.row(k).sum();
            for j in 0..3 {
                assert!((row[j] - v[j]).abs() <= v[j].abs() * AGGREGATE_EPS / mass + 1e-15);
            }
        }
    }

    #[test]
    fn aggregate_single_location() {
        let mut maps = Array2::zeros((1, 4));
        maps[(0, 2)] = 0.5;
        let lang = LanguageFeatureMap {
            features: array![[0.0, 0.0], [0.0, 0.0], [2.0, -4.0], [9.0, 9.0]],
        };
        let a = aggregate_initial(&groups(maps), &lang, 1e-8).unwrap();
        let f = 0.5 / (0.5 + 1e-8);
        assert_eq!(a, array![[2.0 * f, -4.0 * f]]);
    }

    #[test]
    fn aggregate_matches_double_loop_and_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let maps = random(&mut rng, 4, 30).mapv(f64::abs);
        let l1 = random(&mut rng, 30, 6);
        let l2 = random(&mut rng, 30, 6);
        let g = groups(maps.clone());
        let a = aggregate_initial(&g, &LanguageFeatureMap { features: l1.clone() }, 1e-8).unwrap();
        for k in 0..4 {
            let mass: f64 = (0..30).map(|s| maps[(k, s)]).sum();
            for c in 0..6 {
                let mut acc = 0.0;
                for s in 0..30 {
                    acc += maps[(k, s)] * l1[(s, c)];
                }
                assert!((a[(k, c)] - acc / (mass + 1e-8)).abs() < 1e-6);
            }
        }
        let b = aggregate_initial(&g, &LanguageFeatureMap { features: l2.clone() }, 1e-8).unwrap();
        let sum = aggregate_initial(&g, &LanguageFeatureMap { features: &l1 * 2.0 + &l2 }, 1e-8)
            .unwrap();
        assert!((&sum - &(&a * 2.0 + &b)).iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn input_consistency_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 5, 7);
        assert!(loss_input_consistency(&x, &x).unwrap().value.abs() < 1e-12);
        assert!((loss_input_consistency(&(-&x), &x).unwrap().value - 2.0).abs() < 1e-12);
        let y = random(&mut rng, 5, 7);
        let naive: f64 = (0..5)
            .map(|n| 1.0 - naive_cos(&x.row(n).to_vec(), &y.row(n).to_vec()))
            .sum::<f64>()
            / 5.0;
        assert!((loss_input_consistency(&x, &y).unwrap().value - naive).abs() < 1e-7);
    }

    #[test]
    fn zero_rows_count_as_orthogonal() {
        let x = array![[0.0, 0.0], [1.0, 0.0]];
        let y = array![[1.0, 0.0], [1.0, 0.0]];
        let l = loss_input_consistency(&x, &y).unwrap();
        assert_eq!(l.value, 0.5);
        assert!(l.grad_refined.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn negative_text_correlation_zeroes_atom() {
        let g = array![[1.0, 0.0], [0.0, 1.0]];
        // cos(g_0, t_0) = -0.3
        let t = array![[-0.3, (1.0f64 - 0.09).sqrt()], [0.0, 1.0]];
        let bundle = SupervisionBundle {
            gt_features: g,
            text_embeddings: Some(t),
            text_mask: vec![true, true],
        };
        assert_eq!(adaptive_weights(&bundle)[0], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut refined = random(&mut rng, 2, 2);
            refined[(1, 0)] = 0.0;
            refined[(1, 1)] = 1.0;
            let l = loss_gt_alignment(&refined, &bundle).unwrap();
            assert_eq!(l.value, 0.0);
            assert!(l.grad_refined.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gt_alignment_without_text() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random(&mut rng, 4, 8);
        let bundle = SupervisionBundle::without_text(g.clone());
        assert!(loss_gt_alignment(&g, &bundle).unwrap().value.abs() < 1e-12);
        let d = random(&mut rng, 4, 8);
        let naive: f64 = (0..4)
            .map(|n| 1.0 - naive_cos(&d.row(n).to_vec(), &g.row(n).to_vec()))
            .sum::<f64>()
            / 4.0;
        assert!((loss_gt_alignment(&d, &bundle).unwrap().value - naive).abs() < 1e-7);
    }

    #[test]
    fn text_alignment_closed_forms_and_missing_text() {
        let t = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let bundle = SupervisionBundle {
            gt_features: t.clone(),
            text_embeddings: Some(t.clone()),
            text_mask: vec![true, true],
        };
        assert!(loss_text_alignment(&t, &bundle).unwrap().value.abs() < 1e-12);
        let orth = array![[0.0, 0.0, 2.0], [0.0, 0.0, -1.0]];
        assert!((loss_text_alignment(&orth, &bundle).unwrap().value - 1.0).abs() < 1e-12);
        let none = SupervisionBundle::without_text(t.clone());
        assert_eq!(loss_text_alignment(&t, &none), Err(LfaError::MissingText));
    }

    #[test]
    fn text_term_gated_off_without_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = random(&mut rng, 3, 5);
        let d0 = random(&mut rng, 3, 5);
        let g = random(&mut rng, 3, 5);
        let base = SupervisionBundle::without_text(g.clone());
        let with_unused_text = SupervisionBundle {
            text_embeddings: Some(random(&mut rng, 3, 5)),
            ..base.clone()
        };
        let a = total_lfa_loss(&d, &d0, &base, &LfaLambdas::default()).unwrap();
        let big = LfaLambdas { text: 1e6, ..Default::default() };
        let b = total_lfa_loss(&d, &d0, &with_unused_text, &big).unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(b.components.text, 0.0);
        let same = total_lfa_loss(&g, &g, &base, &LfaLambdas::default()).unwrap();
        assert!(same.total.abs() < 1e-12);
    }

    #[test]
    fn cosine_losses_are_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random(&mut rng, 4, 6);
        let d0 = random(&mut rng, 4, 6);
        let bundle = SupervisionBundle {
            gt_features: random(&mut rng, 4, 6),
            text_embeddings: Some(random(&mut rng, 4, 6)),
            text_mask: vec![true, false, true, true],
        };
        let mut scaled = d.clone();
        scaled.row_mut(2).mapv_inplace(|v| v * 37.5);
        let a = total_lfa_loss(&d, &d0, &bundle, &LfaLambdas::default()).unwrap();
        let b = total_lfa_loss(&scaled, &d0, &bundle, &LfaLambdas::default()).unwrap();
        assert!((a.total - b.total).abs() < 1e-6);
        assert!(a.components.input <= 2.0 && a.components.gt <= 2.0 && a.components.text <= 2.0);
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let d0 = random(&mut rng, 4, 6);
            let bundle = SupervisionBundle {
                gt_features: random(&mut rng, 4, 6),
                text_embeddings: Some(random(&mut rng, 4, 6)),
                text_mask: vec![true, false, true, true],
            };
            let d = random(&mut rng, 4, 6);
            let lam = LfaLambdas { input: 0.7, gt: 1.3, text: 0.9 };
            let l = total_lfa_loss(&d, &d0, &bundle, &lam).unwrap();
            let f = |x: &[f64]| {
                let r = Array2::from_shape_vec((4, 6), x.to_vec()).unwrap();
                total_lfa_loss(&r, &d0, &bundle, &lam).unwrap().total
            };
            let num = central_difference(f, d.as_slice().unwrap(), 1e-6);
            assert!(relative_error(l.grad_refined.as_slice().unwrap(), &num) < 1e-6);
            let fi = |x: &[f64]| {
                let i = Array2::from_shape_vec((4, 6), x.to_vec()).unwrap();
                total_lfa_loss(&d, &i, &bundle, &lam).unwrap().total
            };
            let num = central_difference(fi, d0.as_slice().unwrap(), 1e-6);
            assert!(relative_error(l.grad_initial.as_slice().unwrap(), &num) < 1e-6);
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let x = array![[1.0, 0.0]];
        let b = SupervisionBundle::without_text(x.clone());
        let lam = LfaLambdas { gt: -0.1, ..Default::default() };
        assert!(matches!(
            total_lfa_loss(&x, &x, &b, &lam),
            Err(LfaError::NegativeLambda { name: "gt", .. })
        ));
    }
}
