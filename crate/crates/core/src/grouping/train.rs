//! Gradient-descent training of the toy head with per-step re-matching.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::head::{bind, check_dims, forward_on_tape};
use super::losses::{semantic_grouping_loss, SgLoss, SgLossConfig};
use super::{hungarian_match, DenseFeatureField, GroupSet, GroupingError, HeadParams, QueryBank};
use crate::autodiff::{Mat, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub n_queries: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub init_gain: f64,
    pub seed: u64,
    pub loss: SgLossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 1e-2,
            clip_norm: 10.0,
            n_queries: 8,
            hidden: 64,
            blocks: 2,
            init_gain: 1.0,
            seed: 0,
            loss: SgLossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTraceRow {
    pub step: usize,
    pub focal: f64,
    pub dice: f64,
    pub exist: f64,
    pub mse: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub params: HeadParams,
    pub bank: QueryBank,
    /// One row per step, loss before that step's update.
    pub trace: Vec<LossTraceRow>,
}

impl TrainedHead {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,focal,dice,exist,mse,total\n");
        for r in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.focal, r.dice, r.exist, r.mse, r.total
            );
        }
        out
    }
}

/// Matched grouping loss for the current parameters, with gradients for
/// every head tensor and both query tensors.
pub fn sg_loss_and_grads(
    field: &DenseFeatureField,
    bank: &QueryBank,
    params: &HeadParams,
    gt: &Array2<f64>,
    dense_target: Option<&Array2<f64>>,
    config: &SgLossConfig,
) -> Result<(SgLoss, QueryBank, HeadParams), GroupingError> {
    check_dims(field, bank, params)?;
    let mut tape = Tape::new();
    let (bv, pv) = bind(&mut tape, bank, params);
    let out = forward_on_tape(&mut tape, field, &bv, &pv);
    let probs_v = tape.sigmoid(out.mask_logits);
    let exist_v = tape.sigmoid(out.exist_logits);
    let probs = tape.value(probs_v).clone();
    let existence: Vec<f64> = tape.value(exist_v).iter().copied().collect();
    let projected = tape.value(out.field).clone();
    let dense = dense_target.map(|t| (&projected, t));
    let loss = semantic_grouping_loss(&probs, &existence, gt, dense, config)?;

    let lam = config.lambdas;
    let mask_value = lam.focal * loss.components.focal + lam.dice * loss.components.dice;
    let l_mask = tape.loss(probs_v, mask_value, loss.grad_probs.clone());
    let grad_exist = Mat::from_shape_vec((existence.len(), 1), loss.grad_existence.clone())
        .expect("one existence gradient per query");
    let l_exist = tape.loss(exist_v, lam.exist * loss.components.exist, grad_exist);
    let mut terms = vec![(l_mask, 1.0), (l_exist, 1.0)];
    if let Some(g) = &loss.grad_field {
        let l_mse = tape.loss(out.field, lam.mse * loss.components.mse, g.clone());
        terms.push((l_mse, 1.0));
    }
    let total = tape.combine(&terms);
    let grads = tape.backward(total);
    Ok((loss, bv.map(|&v| grads.get(v)), pv.map(|&v| grads.get(v))))
}

fn global_norm(bank: &QueryBank, params: &HeadParams) -> f64 {
    bank.tensors()
        .into_iter()
        .chain(params.tensors())
        .map(|t| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Plain gradient descent on the matched grouping loss. Hungarian matching
/// is recomputed every step. A non-finite loss or gradient aborts.
pub fn train_toy(
    field: &DenseFeatureField,
    gt: &Array2<f64>,
    dense_target: Option<&Array2<f64>>,
    config: &TrainConfig,
) -> Result<TrainedHead, GroupingError> {
    if config.n_queries == 0 {
        return Err(GroupingError::Config("need at least one query".into()));
    }
    if !(config.learning_rate > 0.0) || !(config.clip_norm > 0.0) {
        return Err(GroupingError::Config(
            "learning rate and clip norm must be positive".into(),
        ));
    }
    if gt.ncols() != field.locations() {
        return Err(GroupingError::Shape(format!(
            "ground truth covers {} locations, field has {}",
            gt.ncols(),
            field.locations()
        )));
    }
    let d = field.dim();
    let mut params = HeadParams::init(d, config.hidden, config.blocks, config.init_gain, config.seed);
    let mut bank = QueryBank::init(config.n_queries, d, config.seed.wrapping_add(1));
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (loss, gb, gp) =
            sg_loss_and_grads(field, &bank, &params, gt, dense_target, &config.loss)?;
        let norm = global_norm(&gb, &gp);
        if !loss.total.is_finite() || !norm.is_finite() {
            return Err(GroupingError::Diverged {
                step,
                detail: format!("loss {} gradient norm {}", loss.total, norm),
            });
        }
        let c = loss.components;
        trace.push(LossTraceRow {
            step,
            focal: c.focal,
            dice: c.dice,
            exist: c.exist,
            mse: c.mse,
            total: loss.total,
        });
        let scale = if norm > config.clip_norm {
            config.clip_norm / norm
        } else {
            1.0
        };
        let step_size = config.learning_rate * scale;
        for (p, g) in bank.tensors_mut().into_iter().zip(gb.tensors()) {
            p.scaled_add(-step_size, g);
        }
        for (p, g) in params.tensors_mut().into_iter().zip(gp.tensors()) {
            p.scaled_add(-step_size, g);
        }
    }
    Ok(TrainedHead {
        params,
        bank,
        trace,
    })
}

/// One binary row per group from per-location labels.
pub fn masks_from_labels(labels: &[usize], n_groups: usize) -> Array2<f64> {
    Array2::from_shape_fn((n_groups, labels.len()), |(g, s)| {
        if labels[s] == g {
            1.0
        } else {
            0.0
        }
    })
}

fn iou(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (x, y) = (x >= 0.5, y >= 0.5);
        inter += (x && y) as u8 as f64;
        union += (x || y) as u8 as f64;
    }
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Mean IoU over ground-truth groups after a max-IoU one-to-one matching
/// of predicted masks; unmatched ground-truth groups score 0.
pub fn matched_miou(pred: &Array2<f64>, gt: &Array2<f64>) -> f64 {
    if gt.nrows() == 0 {
        return 0.0;
    }
    let mut cost = Array2::zeros((pred.nrows(), gt.nrows()));
    for (i, p) in pred.axis_iter(Axis(0)).enumerate() {
        for (j, g) in gt.axis_iter(Axis(0)).enumerate() {
            cost[(i, j)] = -iou(p, g);
        }
    }
    let assignment = hungarian_match(&cost).expect("IoU costs are finite");
    -assignment.total / gt.nrows() as f64
}

impl GroupSet {
    /// Binary masks: each location assigned to its argmax group.
    pub fn hard_masks(&self) -> Array2<f64> {
        masks_from_labels(&self.argmax(), self.k())
    }
}
