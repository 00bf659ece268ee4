//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation as a node; [`Tape::backward`] walks the
//! nodes in reverse and accumulates adjoints. Leaves may borrow their values
//! (model parameters) so binding a model to a tape never copies weights.
//! Nodes whose inputs never require a gradient are skipped during backward,
//! which keeps attack-time gradients (w.r.t. a hidden state only) cheap.

use super::mat::{gemm, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Val<'p> {
    Owned(Mat),
    Borrowed(&'p Mat),
}

impl Val<'_> {
    fn mat(&self) -> &Mat {
        match self {
            Val::Owned(m) => m,
            Val::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    AddRow {
        a: Var,
        row: Var,
    },
    Mul(Var, Var),
    Affine {
        a: Var,
        scale: f32,
    },
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        rstd: Vec<f32>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Mat,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    MeanRows(Var),
    Ln {
        a: Var,
        eps: f32,
    },
    SumAll(Var),
    Pick {
        a: Var,
        row: usize,
        col: usize,
    },
}

struct Node<'p> {
    value: Val<'p>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)
const LN_EPS: f32 = 1e-5;

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Val::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.nodes[v.0].value.mat()
    }

    pub fn scalar(&self, v: Var) -> f32 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    /// Owned leaf.
    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Borrowed leaf (parameters, cached states).
    pub fn borrowed(&mut self, value: &'p Mat, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Val::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(am.rows(), bm.cols());
        gemm(am, false, bm, false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul { a, b, trans_b: false }, rg)
    }

    /// `a * b^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(am.rows(), bm.rows());
        gemm(am, false, bm, true, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul { a, b, trans_b: true }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.axpy(-1.0, self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Broadcast-add a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let rm = self.value(row);
        assert_eq!(rm.rows(), 1);
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), rm.cols());
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rm.data()) {
                *o += *b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow { a, row }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape());
        let data = am.data().iter().zip(bm.data()).map(|(x, y)| x * y).collect();
        let out = Mat::from_vec(am.rows(), am.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: f32, shift: f32) -> Var {
        let am = self.value(a);
        let data = am.data().iter().map(|x| scale * x + shift).collect();
        let out = Mat::from_vec(am.rows(), am.cols(), data);
        let rg = self.rg(a);
        self.push(out, Op::Affine { a, scale }, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let data = am
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()))
            .collect();
        let out = Mat::from_vec(am.rows(), am.cols(), data);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = Mat::zeros(rows, cols);
        let mut out = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f32>() / cols as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for c in 0..cols {
                xh[c] = (row[c] - mean) * rs;
            }
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = xh[c] * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Row-wise softmax. With `causal_offset = Some(o)`, entry `(i, j)` is
    /// masked out whenever `j > i + o`.
    pub fn softmax_rows(&mut self, a: Var, causal_offset: Option<usize>) -> Var {
        let am = self.value(a);
        let (rows, cols) = am.shape();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let limit = causal_offset.map_or(cols, |o| (r + o + 1).min(cols));
            let row = &am.row(r)[..limit];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let o = out.row_mut(r);
            let mut sum = 0.0;
            for c in 0..limit {
                let e = (row[c] - max).exp();
                o[c] = e;
                sum += e;
            }
            for v in &mut o[..limit] {
                *v /= sum;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Mean token-level cross-entropy of `logits` rows against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lm = self.value(logits);
        assert_eq!(lm.rows(), targets.len());
        let mut probs = Mat::zeros(lm.rows(), lm.cols());
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            let row = lm.row(r);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let p = probs.row_mut(r);
            let mut sum = 0.0f32;
            for (c, &v) in row.iter().enumerate() {
                p[c] = (v - max).exp();
                sum += p[c];
            }
            p.iter_mut().for_each(|v| *v /= sum);
            total += (sum.ln() + max - row[t]) as f64;
        }
        let loss = (total / targets.len().max(1) as f64) as f32;
        let rg = self.rg(logits);
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tm = self.value(table);
        let mut out = Mat::zeros(ids.len(), tm.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(tm.row(id));
        }
        let rg = self.rg(table);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Mat::vstack(&mats);
        let rg = parts.iter().any(|&v| self.rg(v));
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Mat::hstack(&mats);
        let rg = parts.iter().any(|&v| self.rg(v));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, len);
        let rg = self.rg(a);
        self.push(out, Op::SliceRows { a, start }, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_cols(start, len);
        let rg = self.rg(a);
        self.push(out, Op::SliceCols { a, start }, rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut out = Mat::zeros(1, am.cols());
        for r in 0..am.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(am.row(r)) {
                *o += *v;
            }
        }
        out.scale(1.0 / am.rows() as f32);
        let rg = self.rg(a);
        self.push(out, Op::MeanRows(a), rg)
    }

    /// `ln(max(a, eps))`; the clamped region has zero gradient.
    pub fn ln_clamped(&mut self, a: Var, eps: f32) -> Var {
        let am = self.value(a);
        let data = am.data().iter().map(|&x| x.max(eps).ln()).collect();
        let out = Mat::from_vec(am.rows(), am.cols(), data);
        let rg = self.rg(a);
        self.push(out, Op::Ln { a, eps }, rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f32 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Mat::from_vec(1, 1, vec![s]), Op::SumAll(a), rg)
    }

    pub fn pick(&mut self, a: Var, row: usize, col: usize) -> Var {
        let v = self.value(a).get(row, col);
        let rg = self.rg(a);
        self.push(Mat::from_vec(1, 1, vec![v]), Op::Pick { a, row, col }, rg)
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// requires one.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(root) {
            return Gradients { grads };
        }
        grads[root.0] = Some(Mat::filled(1, 1, 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            // keep intermediate adjoints out of memory; leaves keep theirs
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<'p>, dy: &Mat, grads: &mut [Option<Mat>]) {
        let y = node.value.mat();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let g = slot(grads, *a, am.shape());
                    // y = a b   => da = dy b^T ;  y = a b^T => da = dy b
                    gemm(dy, false, bm, !*trans_b, 1.0, g);
                }
                if self.rg(*b) {
                    let g = slot(grads, *b, bm.shape());
                    if *trans_b {
                        gemm(dy, true, am, false, 1.0, g);
                    } else {
                        gemm(am, true, dy, false, 1.0, g);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        slot(grads, v, dy.shape()).add_assign(dy);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    slot(grads, *a, dy.shape()).add_assign(dy);
                }
                if self.rg(*b) {
                    slot(grads, *b, dy.shape()).axpy(-1.0, dy);
                }
            }
            Op::AddRow { a, row } => {
                if self.rg(*a) {
                    slot(grads, *a, dy.shape()).add_assign(dy);
                }
                if self.rg(*row) {
                    let g = slot(grads, *row, (1, dy.cols()));
                    for r in 0..dy.rows() {
                        for (o, v) in g.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let g = slot(grads, *a, am.shape());
                    for ((o, d), bv) in g.data_mut().iter_mut().zip(dy.data()).zip(bm.data()) {
                        *o += d * bv;
                    }
                }
                if self.rg(*b) {
                    let g = slot(grads, *b, bm.shape());
                    for ((o, d), av) in g.data_mut().iter_mut().zip(dy.data()).zip(am.data()) {
                        *o += d * av;
                    }
                }
            }
            Op::Affine { a, scale } => {
                if self.rg(*a) {
                    slot(grads, *a, dy.shape()).axpy(*scale, dy);
                }
            }
            Op::Gelu(a) => {
                if self.rg(*a) {
                    let am = self.value(*a);
                    let g = slot(grads, *a, am.shape());
                    for ((o, d), &x) in g.data_mut().iter_mut().zip(dy.data()).zip(am.data()) {
                        let inner = GELU_C * (x + 0.044715 * x * x * x);
                        let t = inner.tanh();
                        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
                        *o += d * deriv;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (rows, cols) = dy.shape();
                let gm = self.value(*gain).data();
                if self.rg(*gain) {
                    let g = slot(grads, *gain, (1, cols));
                    for r in 0..rows {
                        for ((o, d), xh) in g.data_mut().iter_mut().zip(dy.row(r)).zip(xhat.row(r)) {
                            *o += d * xh;
                        }
                    }
                }
                if self.rg(*bias) {
                    let g = slot(grads, *bias, (1, cols));
                    for r in 0..rows {
                        for (o, d) in g.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                }
                if self.rg(*x) {
                    let g = slot(grads, *x, (rows, cols));
                    let n = cols as f32;
                    for r in 0..rows {
                        let (dyr, xh) = (dy.row(r), xhat.row(r));
                        let mut mean_dxh = 0.0f32;
                        let mut mean_dxh_xh = 0.0f32;
                        for c in 0..cols {
                            let dxh = dyr[c] * gm[c];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[c];
                        }
                        mean_dxh /= n;
                        mean_dxh_xh /= n;
                        let gr = g.row_mut(r);
                        for c in 0..cols {
                            let dxh = dyr[c] * gm[c];
                            gr[c] += rstd[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if self.rg(*a) {
                    let g = slot(grads, *a, y.shape());
                    for r in 0..y.rows() {
                        let (yr, dr) = (y.row(r), dy.row(r));
                        let dot: f32 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                        for ((o, p), d) in g.row_mut(r).iter_mut().zip(yr).zip(dr) {
                            *o += p * (d - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if self.rg(*logits) {
                    let scale = dy.data()[0] / targets.len().max(1) as f32;
                    let g = slot(grads, *logits, probs.shape());
                    for (r, &t) in targets.iter().enumerate() {
                        let gr = g.row_mut(r);
                        for (o, p) in gr.iter_mut().zip(probs.row(r)) {
                            *o += scale * p;
                        }
                        gr[t] -= scale;
                    }
                }
            }
            Op::Gather { table, ids } => {
                if self.rg(*table) {
                    let shape = self.value(*table).shape();
                    let g = slot(grads, *table, shape);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, d) in g.row_mut(id).iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    if self.rg(p) {
                        let g = slot(grads, p, (rows, cols));
                        for r in 0..rows {
                            for (o, d) in g.row_mut(r).iter_mut().zip(dy.row(start + r)) {
                                *o += d;
                            }
                        }
                    }
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    if self.rg(p) {
                        let g = slot(grads, p, (rows, cols));
                        for r in 0..rows {
                            for (o, d) in g.row_mut(r).iter_mut().zip(&dy.row(r)[start..start + cols]) {
                                *o += d;
                            }
                        }
                    }
                    start += cols;
                }
            }
            Op::SliceRows { a, start } => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let g = slot(grads, *a, shape);
                    for r in 0..dy.rows() {
                        for (o, d) in g.row_mut(start + r).iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let g = slot(grads, *a, shape);
                    for r in 0..dy.rows() {
                        let gr = &mut g.row_mut(r)[*start..*start + dy.cols()];
                        for (o, d) in gr.iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let inv = 1.0 / shape.0 as f32;
                    let g = slot(grads, *a, shape);
                    for r in 0..shape.0 {
                        for (o, d) in g.row_mut(r).iter_mut().zip(dy.data()) {
                            *o += d * inv;
                        }
                    }
                }
            }
            Op::Ln { a, eps } => {
                if self.rg(*a) {
                    let am = self.value(*a);
                    let g = slot(grads, *a, am.shape());
                    for ((o, d), &x) in g.data_mut().iter_mut().zip(dy.data()).zip(am.data()) {
                        if x > *eps {
                            *o += d / x;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let d = dy.data()[0];
                    slot(grads, *a, shape).data_mut().iter_mut().for_each(|o| *o += d);
                }
            }
            Op::Pick { a, row, col } => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let g = slot(grads, *a, shape);
                    let cur = g.get(*row, *col);
                    g.set(*row, *col, cur + dy.data()[0]);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Mat>], v: Var, shape: (usize, usize)) -> &mut Mat {
    grads[v.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1))
}
