//! Grouping losses with closed-form gradients, and the matched set loss
//! that ties them together.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::hungarian::{hungarian_match, Assignment};
use super::GroupingError;

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

/// A scalar loss and its gradient w.r.t. the first argument.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (c, c == p)
}

fn check_shapes(probs: usize, targets: usize) -> Result<(), GroupingError> {
    if probs != targets {
        Err(GroupingError::Shape(format!(
            "probabilities have {probs} elements, targets {targets}"
        )))
    } else {
        Ok(())
    }
}

/// Mean sigmoid focal loss `-α_t (1 - p_t)^γ log p_t`.
pub fn focal_loss(
    probs: &[f64],
    targets: &[f64],
    alpha: f64,
    gamma: f64,
) -> Result<LossGrad, GroupingError> {
    check_shapes(probs.len(), targets.len())?;
    let n = probs.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &t) in probs.iter().zip(targets) {
        let (p, inside) = clamp_prob(p);
        let positive = t >= 0.5;
        let (pt, at, sign) = if positive {
            (p, alpha, 1.0)
        } else {
            (1.0 - p, 1.0 - alpha, -1.0)
        };
        let q = 1.0 - pt;
        let log_pt = pt.ln();
        value += -at * q.powf(gamma) * log_pt;
        // d/dp_t of -α_t q^γ log p_t, with q = 1 - p_t.
        let dq_term = if gamma == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * log_pt
        };
        let d_pt = at * (dq_term - q.powf(gamma) / pt);
        grad.push(if inside { sign * d_pt / n } else { 0.0 });
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// `1 - (2 Σ p t + s) / (Σ p + Σ t + s)`.
pub fn dice_loss(probs: &[f64], targets: &[f64], smooth: f64) -> Result<LossGrad, GroupingError> {
    check_shapes(probs.len(), targets.len())?;
    let inter: f64 = probs.iter().zip(targets).map(|(p, t)| p * t).sum();
    let sum_p: f64 = probs.iter().sum();
    let sum_t: f64 = targets.iter().sum();
    let num = 2.0 * inter + smooth;
    let den = sum_p + sum_t + smooth;
    let grad = targets
        .iter()
        .map(|&t| -(2.0 * t * den - num) / (den * den))
        .collect();
    Ok(LossGrad {
        value: 1.0 - num / den,
        grad,
    })
}

/// Mean binary cross-entropy: target 1 for matched queries, 0 otherwise.
pub fn existence_loss(existence: &[f64], matched: &[bool]) -> Result<LossGrad, GroupingError> {
    check_shapes(existence.len(), matched.len())?;
    let n = existence.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(existence.len());
    for (&p, &m) in existence.iter().zip(matched) {
        let (p, inside) = clamp_prob(p);
        let (v, g) = if m {
            (-p.ln(), -1.0 / p)
        } else {
            (-(1.0 - p).ln(), 1.0 / (1.0 - p))
        };
        value += v;
        grad.push(if inside { g / n } else { 0.0 });
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// Squared error averaged over every element (locations x channels).
pub fn mse_dense_loss(field: &Array2<f64>, target: &Array2<f64>) -> Result<LossGrad, GroupingError> {
    if field.dim() != target.dim() {
        return Err(GroupingError::Shape(format!(
            "field is {:?}, target is {:?}",
            field.dim(),
            target.dim()
        )));
    }
    let n = field.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(field.len());
    for (f, t) in field.iter().zip(target.iter()) {
        let d = f - t;
        value += d * d;
        grad.push(2.0 * d / n);
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgLambdas {
    pub focal: f64,
    pub dice: f64,
    pub exist: f64,
    pub mse: f64,
}

impl Default for SgLambdas {
    fn default() -> Self {
        Self {
            focal: 20.0,
            dice: 1.0,
            exist: 1.0,
            mse: 1.0,
        }
    }
}

impl SgLambdas {
    fn check(&self) -> Result<(), GroupingError> {
        for (name, v) in [
            ("focal", self.focal),
            ("dice", self.dice),
            ("exist", self.exist),
            ("mse", self.mse),
        ] {
            if !(v >= 0.0) {
                return Err(GroupingError::NegativeLambda { name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SgComponents {
    pub focal: f64,
    pub dice: f64,
    pub exist: f64,
    pub mse: f64,
}

/// Weighted sum of the four grouping terms.
pub fn total_sg_loss(components: &SgComponents, lambdas: &SgLambdas) -> Result<f64, GroupingError> {
    lambdas.check()?;
    Ok(lambdas.focal * components.focal
        + lambdas.dice * components.dice
        + lambdas.exist * components.exist
        + lambdas.mse * components.mse)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgLossConfig {
    pub lambdas: SgLambdas,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub dice_smooth: f64,
}

impl Default for SgLossConfig {
    fn default() -> Self {
        Self {
            lambdas: SgLambdas::default(),
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            dice_smooth: 1.0,
        }
    }
}

/// Matched grouping loss and its gradients.
#[derive(Debug, Clone)]
pub struct SgLoss {
    pub components: SgComponents,
    pub total: f64,
    /// Predictions (rows) matched to ground-truth groups (cols).
    pub assignment: Assignment,
    /// d total / d mask probabilities, N x S.
    pub grad_probs: Array2<f64>,
    /// d total / d existence probabilities.
    pub grad_existence: Vec<f64>,
    /// d total / d dense field, when a dense target was given.
    pub grad_field: Option<Array2<f64>>,
}

fn row(a: ArrayView1<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Pairwise matching cost: focal + dice on the masks minus the existence score.
pub fn matching_cost(
    probs: &Array2<f64>,
    existence: &[f64],
    gt: &Array2<f64>,
    config: &SgLossConfig,
) -> Result<Array2<f64>, GroupingError> {
    let mut cost = Array2::zeros((probs.nrows(), gt.nrows()));
    for n in 0..probs.nrows() {
        let p = row(probs.row(n));
        for g in 0..gt.nrows() {
            let t = row(gt.row(g));
            let f = focal_loss(&p, &t, config.focal_alpha, config.focal_gamma)?.value;
            let d = dice_loss(&p, &t, config.dice_smooth)?.value;
            cost[(n, g)] =
                config.lambdas.focal * f + config.lambdas.dice * d - existence[n];
        }
    }
    Ok(cost)
}

/// Hungarian-matched grouping loss over N predictions and G ground-truth
/// masks. Focal and dice are averaged over matched pairs; existence is
/// averaged over all queries; the dense term is added when `dense` is given.
pub fn semantic_grouping_loss(
    probs: &Array2<f64>,
    existence: &[f64],
    gt: &Array2<f64>,
    dense: Option<(&Array2<f64>, &Array2<f64>)>,
    config: &SgLossConfig,
) -> Result<SgLoss, GroupingError> {
    config.lambdas.check()?;
    if probs.nrows() != existence.len() {
        return Err(GroupingError::Shape(format!(
            "{} mask rows but {} existence scores",
            probs.nrows(),
            existence.len()
        )));
    }
    if probs.ncols() != gt.ncols() {
        return Err(GroupingError::Shape(format!(
            "predictions cover {} locations, ground truth {}",
            probs.ncols(),
            gt.ncols()
        )));
    }
    let cost = matching_cost(probs, existence, gt, config)?;
    let assignment = hungarian_match(&cost)?;

    let lam = config.lambdas;
    let mut components = SgComponents::default();
    let mut grad_probs = Array2::zeros(probs.dim());
    let pairs = assignment.pairs.len().max(1) as f64;
    for &(n, g) in &assignment.pairs {
        let p = row(probs.row(n));
        let t = row(gt.row(g));
        let f = focal_loss(&p, &t, config.focal_alpha, config.focal_gamma)?;
        let d = dice_loss(&p, &t, config.dice_smooth)?;
        components.focal += f.value / pairs;
        components.dice += d.value / pairs;
        for (s, (gf, gd)) in f.grad.iter().zip(&d.grad).enumerate() {
            grad_probs[(n, s)] += (lam.focal * gf + lam.dice * gd) / pairs;
        }
    }

    let mut matched = vec![false; existence.len()];
    for &(n, _) in &assignment.pairs {
        matched[n] = true;
    }
    let e = existence_loss(existence, &matched)?;
    components.exist = e.value;
    let grad_existence = e.grad.iter().map(|g| lam.exist * g).collect();

    let grad_field = match dense {
        Some((field, target)) => {
            let m = mse_dense_loss(field, target)?;
            components.mse = m.value;
            Some(
                Array2::from_shape_vec(field.dim(), m.grad.iter().map(|g| lam.mse * g).collect())
                    .expect("gradient matches field shape"),
            )
        }
        None => None,
    };
    let total = total_sg_loss(&components, &lam)?;
    Ok(SgLoss {
        components,
        total,
        assignment,
        grad_probs,
        grad_existence,
        grad_field,
    })
}
