//! Cross-attention refinement of pooled atoms against the language map.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{total_lfa_loss, LanguageFeatureMap, LfaError, LfaLambdas, LfaLoss, SupervisionBundle};
use crate::autodiff::{Mat, Tape, Var};
use crate::grouping::{AttnWeights, CrossBlock};

#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams<M = Mat> {
    pub blocks: Vec<CrossBlock<M>>,
}

impl<M> RefineParams<M> {
    pub fn map<N>(&self, mut f: impl FnMut(&M) -> N) -> RefineParams<N> {
        RefineParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| CrossBlock {
                    attn: AttnWeights {
                        wq: f(&b.attn.wq),
                        wk: f(&b.attn.wk),
                        wv: f(&b.attn.wv),
                        wo: f(&b.attn.wo),
                    },
                    ffn_w1: f(&b.ffn_w1),
                    ffn_b1: f(&b.ffn_b1),
                    ffn_w2: f(&b.ffn_w2),
                    ffn_b2: f(&b.ffn_b2),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&M> {
        self.blocks
            .iter()
            .flat_map(|b| {
                [
                    &b.attn.wq, &b.attn.wk, &b.attn.wv, &b.attn.wo, &b.ffn_w1, &b.ffn_b1,
                    &b.ffn_w2, &b.ffn_b2,
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut M> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                [
                    &mut b.attn.wq,
                    &mut b.attn.wk,
                    &mut b.attn.wv,
                    &mut b.attn.wo,
                    &mut b.ffn_w1,
                    &mut b.ffn_b1,
                    &mut b.ffn_w2,
                    &mut b.ffn_b2,
                ]
            })
            .collect()
    }
}

impl RefineParams {
    /// All-zero blocks: refinement is the identity.
    pub fn zeros(c: usize, hidden: usize, blocks: usize) -> Self {
        Self {
            blocks: (0..blocks)
                .map(|_| CrossBlock {
                    attn: crate::grouping::head_attn_zeros(c),
                    ffn_w1: Mat::zeros((c, hidden)),
                    ffn_b1: Mat::zeros((1, hidden)),
                    ffn_w2: Mat::zeros((hidden, c)),
                    ffn_b2: Mat::zeros((1, c)),
                })
                .collect(),
        }
    }

    /// Normal init with std `gain / sqrt(fan_in)` on matrices, zero biases.
    pub fn init(c: usize, hidden: usize, blocks: usize, gain: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(c, hidden, blocks);
        for t in p.tensors_mut() {
            let (rows, cols) = t.dim();
            if rows == 1 {
                continue;
            }
            let dist = Normal::new(0.0, gain / (rows as f64).sqrt()).expect("positive std");
            *t = Mat::from_shape_fn((rows, cols), |_| dist.sample(&mut rng));
        }
        p
    }

    fn check(&self, c: usize) -> Result<(), LfaError> {
        match self.blocks.first() {
            Some(b) if b.attn.wq.nrows() != c => Err(LfaError::Shape(format!(
                "refinement blocks expect width {}, atoms have {c}",
                b.attn.wq.nrows()
            ))),
            _ => Ok(()),
        }
    }
}

fn refine_on_tape(
    tape: &mut Tape,
    initial: Var,
    lang: Var,
    params: &RefineParams<Var>,
) -> Var {
    let mut x = initial;
    for b in &params.blocks {
        let w = &b.attn;
        let a = tape.attention(x, lang, lang, w.wq, w.wk, w.wv, w.wo);
        x = tape.add(x, a);
        let h = tape.matmul(x, b.ffn_w1);
        let h = tape.add_row(h, b.ffn_b1);
        let h = tape.tanh(h);
        let h = tape.matmul(h, b.ffn_w2);
        let h = tape.add_row(h, b.ffn_b2);
        x = tape.add(x, h);
    }
    x
}

fn check_inputs(
    initial: &Array2<f64>,
    lang: &LanguageFeatureMap,
    params: &RefineParams,
) -> Result<(), LfaError> {
    if initial.ncols() != lang.features.ncols() {
        return Err(LfaError::Shape(format!(
            "atoms have width {}, language map {}",
            initial.ncols(),
            lang.features.ncols()
        )));
    }
    params.check(initial.ncols())
}

/// Atoms attend to the language map through every block, with residual
/// connections around attention and the feed-forward sublayer.
pub fn refine_atoms(
    initial: &Array2<f64>,
    lang: &LanguageFeatureMap,
    params: &RefineParams,
) -> Result<Array2<f64>, LfaError> {
    check_inputs(initial, lang, params)?;
    let mut tape = Tape::new();
    let x0 = tape.leaf(initial.clone());
    let l = tape.leaf(lang.features.clone());
    let p = params.map(|m| tape.leaf(m.clone()));
    let out = refine_on_tape(&mut tape, x0, l, &p);
    Ok(tape.value(out).clone())
}

/// Total aggregation loss of the refined atoms and its gradient for every
/// refinement tensor.
pub fn lfa_loss_and_grads(
    initial: &Array2<f64>,
    lang: &LanguageFeatureMap,
    params: &RefineParams,
    bundle: &SupervisionBundle,
    lambdas: &LfaLambdas,
) -> Result<(LfaLoss, RefineParams), LfaError> {
    check_inputs(initial, lang, params)?;
    let mut tape = Tape::new();
    let x0 = tape.leaf(initial.clone());
    let l = tape.leaf(lang.features.clone());
    let p = params.map(|m| tape.leaf(m.clone()));
    let out = refine_on_tape(&mut tape, x0, l, &p);
    let refined = tape.value(out).clone();
    let loss = total_lfa_loss(&refined, initial, bundle, lambdas)?;
    let node = tape.loss(out, loss.total, loss.grad_refined.clone());
    let grads = tape.backward(node);
    Ok((loss, p.map(|&v| grads.get(v))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub hidden: usize,
    pub blocks: usize,
    pub init_gain: f64,
    pub seed: u64,
    pub lambdas: LfaLambdas,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 1e-2,
            clip_norm: 10.0,
            hidden: 32,
            blocks: 2,
            init_gain: 0.1,
            seed: 0,
            lambdas: LfaLambdas::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefinedAtoms {
    pub params: RefineParams,
    pub refined: Array2<f64>,
    /// Total loss before each update.
    pub trace: Vec<f64>,
}

/// Gradient descent on the total aggregation loss.
pub fn train_refinement(
    initial: &Array2<f64>,
    lang: &LanguageFeatureMap,
    bundle: &SupervisionBundle,
    config: &RefineConfig,
) -> Result<RefinedAtoms, LfaError> {
    let c = initial.ncols();
    let mut params = RefineParams::init(c, config.hidden, config.blocks, config.init_gain, config.seed);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (loss, grads) = lfa_loss_and_grads(initial, lang, &params, bundle, &config.lambdas)?;
        let norm = grads
            .tensors()
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if !loss.total.is_finite() || !norm.is_finite() {
            return Err(LfaError::Diverged(step));
        }
        trace.push(loss.total);
        let scale = if norm > config.clip_norm { config.clip_norm / norm } else { 1.0 };
        for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            p.scaled_add(-config.learning_rate * scale, g);
        }
    }
    let refined = refine_atoms(initial, lang, &params)?;
    Ok(RefinedAtoms {
        params,
        refined,
        trace,
    })
}
