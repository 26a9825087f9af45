//! Minimal tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Enough to train the toy grouping head and the atom refinement blocks:
//! matrix products, elementwise arithmetic, row softmax, a few activations,
//! row gathers, and opaque scalar losses whose gradient is supplied by the
//! caller (the closed-form loss gradients in `grouping` and `lfa`).

use ndarray::{Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a + 1·b` with `b` a single row broadcast over `a`'s rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    SelectRows(Var, Vec<usize>),
    /// Scalar loss with a caller-provided gradient w.r.t. `input`.
    Loss { input: Var, grad: Mat },
    /// `Σ coef_i · x_i` over 1x1 nodes.
    Combine(Vec<(Var, f64)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
    shapes: Vec<(usize, usize)>,
}

impl Grads {
    /// Gradient of the output w.r.t. `v`; zeros when `v` did not contribute.
    pub fn get(&self, v: Var) -> Mat {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Mat::zeros(self.shapes[v.0]),
        }
    }
}

fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        self.push(v, Op::SelectRows(a, rows.to_vec()))
    }

    /// Records a scalar loss `value` of `input` whose gradient is `grad`.
    pub fn loss(&mut self, input: Var, value: f64, grad: Mat) -> Var {
        assert_eq!(grad.dim(), self.value(input).dim(), "loss gradient shape");
        self.push(Mat::from_elem((1, 1), value), Op::Loss { input, grad })
    }

    /// Linear combination of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let v: f64 = terms.iter().map(|&(t, c)| c * self.scalar(t)).sum();
        self.push(Mat::from_elem((1, 1), v), Op::Combine(terms.to_vec()))
    }

    /// Single-head scaled dot-product attention
    /// `softmax((q Wq)(k Wk)ᵀ / sqrt(d)) (v Wv) Wo`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        wo: Var,
    ) -> Var {
        let d = self.value(wq).ncols().max(1) as f64;
        let qp = self.matmul(q, wq);
        let kp = self.matmul(k, wk);
        let vp = self.matmul(v, wv);
        let scores = self.matmul_t(qp, kp);
        let scores = self.scale(scores, 1.0 / d.sqrt());
        let attn = self.softmax_rows(scores);
        let mixed = self.matmul(attn, vp);
        self.matmul(mixed, wo)
    }

    /// Reverse pass from the 1x1 node `out`.
    pub fn backward(&self, out: Var) -> Grads {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = vec![None; n];
        grads[out.0] = Some(Mat::ones(self.nodes[out.0].value.dim()));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *row, gr);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, &g * *s),
                Op::Tanh(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(&node.value).for_each(|x, &y| *x *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(&node.value).for_each(|x, &y| *x *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                        let s = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|x, &yy| *x -= yy * s);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SelectRows(a, rows) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    for (src, &dst) in rows.iter().enumerate() {
                        let mut r = ga.row_mut(dst);
                        r += &g.row(src);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Loss { input, grad } => {
                    acc(&mut grads, *input, grad * g[(0, 0)]);
                }
                Op::Combine(terms) => {
                    for &(t, c) in terms {
                        acc(&mut grads, t, Mat::from_elem((1, 1), c * g[(0, 0)]));
                    }
                }
            }
            grads[i] = Some(g);
        }
        Grads {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        }
    }
}
