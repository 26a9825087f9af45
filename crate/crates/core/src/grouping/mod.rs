//! Toy-scale semantic grouping: a query head over a dense feature field that
//! predicts group masks and existence scores, the matched loss stack, and
//! sampling of per-primitive weights from the resulting group maps.

mod field;
mod head;
pub mod hungarian;
pub mod losses;
mod sample;
mod train;

use ndarray::{Array2, Axis};
use thiserror::Error;

pub use field::{sinusoidal_positions, synthetic_region_field, DenseFeatureField};
pub(crate) use head::attn_zeros as head_attn_zeros;
pub use head::{forward_grouping, AttnWeights, CrossBlock, GroupPrediction, HeadParams, QueryBank};
pub use hungarian::{hungarian_match, Assignment};
pub use losses::{
    dice_loss, existence_loss, focal_loss, mse_dense_loss, semantic_grouping_loss,
    total_sg_loss, SgComponents, SgLambdas, SgLoss, SgLossConfig,
};
pub use sample::{sample_weights, CameraLocator, Locator, SampledWeights};
pub use train::{
    masks_from_labels, matched_miou, sg_loss_and_grads, train_toy, LossTraceRow, TrainConfig, TrainedHead,
};

/// Default existence threshold.
pub const TAU_EXIST: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupingError {
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss weight {name} is negative ({value})")]
    NegativeLambda { name: &'static str, value: f64 },
    #[error("no query has existence above {tau}; the scene would have zero groups")]
    EmptyScene { tau: f64 },
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Softmax-normalized group maps over the queries that survived filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSet {
    /// K x S, each column on the simplex.
    pub maps: Array2<f64>,
    /// Query index behind each row of `maps`.
    pub kept_indices: Vec<usize>,
}

impl GroupSet {
    pub fn k(&self) -> usize {
        self.maps.nrows()
    }

    pub fn locations(&self) -> usize {
        self.maps.ncols()
    }

    /// Index of the strongest group at every location.
    pub fn argmax(&self) -> Vec<usize> {
        self.maps
            .axis_iter(Axis(1))
            .map(|col| {
                let mut best = 0;
                for (k, &v) in col.iter().enumerate() {
                    if v > col[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Keeps queries with existence strictly above `tau` and applies a softmax
/// over the surviving mask logits at every location.
pub fn filter_and_normalize(pred: &GroupPrediction, tau: f64) -> Result<GroupSet, GroupingError> {
    let kept_indices: Vec<usize> = pred
        .existence
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > tau)
        .map(|(i, _)| i)
        .collect();
    if kept_indices.is_empty() {
        return Err(GroupingError::EmptyScene { tau });
    }
    let mut maps = pred.mask_logits.select(Axis(0), &kept_indices);
    for mut col in maps.axis_iter_mut(Axis(1)) {
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| (v - max).exp());
        let sum = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
    Ok(GroupSet { maps, kept_indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred(logits: Array2<f64>, existence: Vec<f64>) -> GroupPrediction {
        GroupPrediction {
            mask_logits: logits,
            existence,
        }
    }

    #[test]
    fn single_survivor_gives_ones() {
        let p = pred(array![[0.3, -2.0, 5.0], [1.0, 1.0, 1.0]], vec![0.9, 0.1]);
        let g = filter_and_normalize(&p, 0.5).unwrap();
        assert_eq!(g.kept_indices, vec![0]);
        assert!(g.maps.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equal_logits_split_evenly() {
        let p = pred(Array2::from_elem((2, 6), 0.7), vec![0.8, 0.6]);
        let g = filter_and_normalize(&p, 0.5).unwrap();
        assert!(g.maps.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn columns_sum_to_one_and_stay_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = Array2::from_shape_fn((7, 200), |_| rng.random_range(-30.0..30.0));
        let existence = vec![0.9, 0.2, 0.7, 0.6, 0.95, 0.51, 0.3];
        let g = filter_and_normalize(&pred(logits, existence), 0.5).unwrap();
        assert_eq!(g.k(), 5);
        for col in g.maps.axis_iter(Axis(1)) {
            assert!((col.sum() - 1.0).abs() < 1e-6);
            assert!(col.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn all_filtered_is_an_error() {
        let p = pred(Array2::zeros((2, 3)), vec![0.5, 0.1]);
        assert_eq!(
            filter_and_normalize(&p, 0.5),
            Err(GroupingError::EmptyScene { tau: 0.5 })
        );
    }
}
