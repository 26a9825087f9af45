//! Query head: self-attention over queries, cross-attention into the field,
//! then a mask MLP and an existence logit per query.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DenseFeatureField, GroupingError};
use crate::autodiff::{sigmoid, Mat, Tape, Var};

/// Learnable query patterns `q_n` and positional embeddings `r_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBank<M = Mat> {
    /// N x d
    pub patterns: M,
    /// N x d
    pub pos_embeddings: M,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnWeights<M = Mat> {
    pub wq: M,
    pub wk: M,
    pub wv: M,
    pub wo: M,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossBlock<M = Mat> {
    pub attn: AttnWeights<M>,
    pub ffn_w1: M,
    pub ffn_b1: M,
    pub ffn_w2: M,
    pub ffn_b2: M,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<M = Mat> {
    /// d x d projection applied to the raw field before everything else.
    pub field_proj: M,
    pub self_blocks: Vec<AttnWeights<M>>,
    pub cross_blocks: Vec<CrossBlock<M>>,
    pub mask_w1: M,
    pub mask_b1: M,
    pub mask_w2: M,
    pub mask_b2: M,
    /// d x 1
    pub exist_w: M,
    /// 1 x 1
    pub exist_b: M,
}

impl<M> QueryBank<M> {
    pub fn map<N>(&self, mut f: impl FnMut(&M) -> N) -> QueryBank<N> {
        QueryBank {
            patterns: f(&self.patterns),
            pos_embeddings: f(&self.pos_embeddings),
        }
    }

    pub fn tensors(&self) -> Vec<&M> {
        vec![&self.patterns, &self.pos_embeddings]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut M> {
        vec![&mut self.patterns, &mut self.pos_embeddings]
    }
}

impl<M> AttnWeights<M> {
    fn map<N>(&self, f: &mut impl FnMut(&M) -> N) -> AttnWeights<N> {
        AttnWeights {
            wq: f(&self.wq),
            wk: f(&self.wk),
            wv: f(&self.wv),
            wo: f(&self.wo),
        }
    }

    fn push_refs<'a>(&'a self, out: &mut Vec<&'a M>) {
        out.extend([&self.wq, &self.wk, &self.wv, &self.wo]);
    }

    fn push_muts<'a>(&'a mut self, out: &mut Vec<&'a mut M>) {
        out.extend([&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]);
    }
}

impl<M> CrossBlock<M> {
    fn map<N>(&self, f: &mut impl FnMut(&M) -> N) -> CrossBlock<N> {
        CrossBlock {
            attn: self.attn.map(f),
            ffn_w1: f(&self.ffn_w1),
            ffn_b1: f(&self.ffn_b1),
            ffn_w2: f(&self.ffn_w2),
            ffn_b2: f(&self.ffn_b2),
        }
    }
}

impl<M> HeadParams<M> {
    pub fn map<N>(&self, mut f: impl FnMut(&M) -> N) -> HeadParams<N> {
        HeadParams {
            field_proj: f(&self.field_proj),
            self_blocks: self.self_blocks.iter().map(|b| b.map(&mut f)).collect(),
            cross_blocks: self.cross_blocks.iter().map(|b| b.map(&mut f)).collect(),
            mask_w1: f(&self.mask_w1),
            mask_b1: f(&self.mask_b1),
            mask_w2: f(&self.mask_w2),
            mask_b2: f(&self.mask_b2),
            exist_w: f(&self.exist_w),
            exist_b: f(&self.exist_b),
        }
    }

    /// Every tensor in a fixed order (the order `tensors_mut` also uses).
    pub fn tensors(&self) -> Vec<&M> {
        let mut out = vec![&self.field_proj];
        for b in &self.self_blocks {
            b.push_refs(&mut out);
        }
        for b in &self.cross_blocks {
            b.attn.push_refs(&mut out);
            out.extend([&b.ffn_w1, &b.ffn_b1, &b.ffn_w2, &b.ffn_b2]);
        }
        out.extend([
            &self.mask_w1,
            &self.mask_b1,
            &self.mask_w2,
            &self.mask_b2,
            &self.exist_w,
            &self.exist_b,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut M> {
        let mut out = vec![&mut self.field_proj];
        for b in &mut self.self_blocks {
            b.push_muts(&mut out);
        }
        for b in &mut self.cross_blocks {
            b.attn.push_muts(&mut out);
            out.extend([&mut b.ffn_w1, &mut b.ffn_b1, &mut b.ffn_w2, &mut b.ffn_b2]);
        }
        out.extend([
            &mut self.mask_w1,
            &mut self.mask_b1,
            &mut self.mask_w2,
            &mut self.mask_b2,
            &mut self.exist_w,
            &mut self.exist_b,
        ]);
        out
    }
}

pub(crate) fn attn_zeros(d: usize) -> AttnWeights {
    AttnWeights {
        wq: Mat::zeros((d, d)),
        wk: Mat::zeros((d, d)),
        wv: Mat::zeros((d, d)),
        wo: Mat::zeros((d, d)),
    }
}

impl HeadParams {
    /// Identity field projection, every other tensor zero. The forward pass
    /// then yields zero mask logits and existence 0.5 for every query.
    pub fn zeros(d: usize, hidden: usize, blocks: usize) -> Self {
        Self {
            field_proj: Mat::eye(d),
            self_blocks: (0..blocks).map(|_| attn_zeros(d)).collect(),
            cross_blocks: (0..blocks)
                .map(|_| CrossBlock {
                    attn: attn_zeros(d),
                    ffn_w1: Mat::zeros((d, hidden)),
                    ffn_b1: Mat::zeros((1, hidden)),
                    ffn_w2: Mat::zeros((hidden, d)),
                    ffn_b2: Mat::zeros((1, d)),
                })
                .collect(),
            mask_w1: Mat::zeros((d, d)),
            mask_b1: Mat::zeros((1, d)),
            mask_w2: Mat::zeros((d, d)),
            mask_b2: Mat::zeros((1, d)),
            exist_w: Mat::zeros((d, 1)),
            exist_b: Mat::zeros((1, 1)),
        }
    }

    /// Scaled-normal init (std `gain / sqrt(fan_in)`), zero biases, identity
    /// field projection.
    pub fn init(d: usize, hidden: usize, blocks: usize, gain: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(d, hidden, blocks);
        for (i, t) in p.tensors_mut().into_iter().enumerate() {
            let (rows, cols) = t.dim();
            if i == 0 || rows == 1 {
                continue;
            }
            let dist = Normal::new(0.0, gain / (rows as f64).sqrt()).expect("positive std");
            *t = Mat::from_shape_fn((rows, cols), |_| dist.sample(&mut rng));
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.field_proj.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl QueryBank {
    pub fn init(n: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0).expect("unit std");
        Self {
            patterns: Mat::from_shape_fn((n, d), |_| dist.sample(&mut rng)),
            pos_embeddings: Mat::from_shape_fn((n, d), |_| dist.sample(&mut rng)),
        }
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            patterns: Mat::zeros((n, d)),
            pos_embeddings: Mat::zeros((n, d)),
        }
    }

    pub fn len(&self) -> usize {
        self.patterns.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-query mask logits over every location and existence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrediction {
    /// N x S
    pub mask_logits: Array2<f64>,
    /// N values in (0, 1).
    pub existence: Vec<f64>,
}

impl GroupPrediction {
    pub fn mask_probs(&self) -> Array2<f64> {
        self.mask_logits.mapv(sigmoid)
    }
}

/// Tape nodes produced by [`forward_on_tape`].
pub(crate) struct HeadOutputs {
    pub mask_logits: Var,
    /// N x 1
    pub exist_logits: Var,
    /// S x d projected field.
    pub field: Var,
}

pub(crate) fn check_dims(
    field: &DenseFeatureField,
    bank: &QueryBank,
    params: &HeadParams,
) -> Result<(), GroupingError> {
    let d = params.dim();
    let problems = [
        (field.dim(), "field feature width"),
        (field.positions.ncols(), "field positional width"),
        (bank.patterns.ncols(), "query pattern width"),
        (bank.pos_embeddings.ncols(), "query positional width"),
    ];
    for (got, what) in problems {
        if got != d {
            return Err(GroupingError::Shape(format!("{what} is {got}, head expects {d}")));
        }
    }
    if bank.patterns.nrows() != bank.pos_embeddings.nrows() {
        return Err(GroupingError::Shape("query bank rows disagree".into()));
    }
    if bank.is_empty() {
        return Err(GroupingError::Shape("query bank is empty".into()));
    }
    if field.positions.nrows() != field.locations() {
        return Err(GroupingError::Shape("field positions do not cover every location".into()));
    }
    Ok(())
}

pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    field: &DenseFeatureField,
    bank: &QueryBank<Var>,
    params: &HeadParams<Var>,
) -> HeadOutputs {
    let raw = tape.leaf(field.features.clone());
    let pe = tape.leaf(field.positions.clone());
    let fp = tape.matmul(raw, params.field_proj);
    let keys = tape.add(fp, pe);

    let mut x = bank.patterns;
    for b in &params.self_blocks {
        let xr = tape.add(x, bank.pos_embeddings);
        let a = tape.attention(xr, xr, x, b.wq, b.wk, b.wv, b.wo);
        x = tape.add(x, a);
    }
    for b in &params.cross_blocks {
        let xr = tape.add(x, bank.pos_embeddings);
        let w = &b.attn;
        let a = tape.attention(xr, keys, fp, w.wq, w.wk, w.wv, w.wo);
        x = tape.add(x, a);
        let h = tape.matmul(x, b.ffn_w1);
        let h = tape.add_row(h, b.ffn_b1);
        let h = tape.tanh(h);
        let h = tape.matmul(h, b.ffn_w2);
        let h = tape.add_row(h, b.ffn_b2);
        x = tape.add(x, h);
    }
    let e = tape.matmul(x, params.mask_w1);
    let e = tape.add_row(e, params.mask_b1);
    let e = tape.tanh(e);
    let e = tape.matmul(e, params.mask_w2);
    let e = tape.add_row(e, params.mask_b2);
    let mask_logits = tape.matmul_t(e, fp);
    let ex = tape.matmul(x, params.exist_w);
    let exist_logits = tape.add_row(ex, params.exist_b);
    HeadOutputs {
        mask_logits,
        exist_logits,
        field: fp,
    }
}

pub(crate) fn bind(
    tape: &mut Tape,
    bank: &QueryBank,
    params: &HeadParams,
) -> (QueryBank<Var>, HeadParams<Var>) {
    let b = bank.map(|m| tape.leaf(m.clone()));
    let p = params.map(|m| tape.leaf(m.clone()));
    (b, p)
}

/// Runs the head and returns mask logits and existence probabilities.
pub fn forward_grouping(
    field: &DenseFeatureField,
    bank: &QueryBank,
    params: &HeadParams,
) -> Result<GroupPrediction, GroupingError> {
    check_dims(field, bank, params)?;
    let mut tape = Tape::new();
    let (b, p) = bind(&mut tape, bank, params);
    let out = forward_on_tape(&mut tape, field, &b, &p);
    Ok(GroupPrediction {
        mask_logits: tape.value(out.mask_logits).clone(),
        existence: tape.value(out.exist_logits).iter().map(|&v| sigmoid(v)).collect(),
    })
}
