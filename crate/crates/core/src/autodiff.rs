//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are either
//! constants or trainable inputs; [`Tape::backward`] walks the record in
//! reverse and accumulates gradients only along paths that reach a
//! trainable leaf.

use crate::dirichlet;
use crate::matrix::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    StackRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    SoftmaxRows(Var),
    GroupScores(Var, Var, usize),
    GroupMix(Var, Var, usize),
    DirichletNll {
        alpha: Var,
        targets: Matrix,
        mask: Vec<bool>,
        eps: f64,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn trainable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| p + q).collect();
        let v = Matrix::from_vec(x.rows(), x.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// `a` plus the 1×cols row `bias` broadcast over every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!(b.rows(), 1, "bias must be a single row");
        assert_eq!(x.cols(), b.cols(), "bias width mismatch");
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, bb) in v.row_mut(i).iter_mut().zip(b.row(0)) {
                *o += bb;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(v, Op::AddRow(a, bias), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| p * q).collect();
        let v = Matrix::from_vec(x.rows(), x.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let out = v.row_mut(i);
            let mut off = 0;
            for p in parts {
                let m = &self.nodes[p.0].value;
                assert_eq!(m.rows(), rows, "concat_cols row mismatch");
                out[off..off + m.cols()].copy_from_slice(m.row(i));
                off += m.cols();
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let x = self.value(a);
        assert!(start + width <= x.cols(), "slice out of range");
        let v = Matrix::from_fn(x.rows(), width, |i, j| x.get(i, start + j));
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = &self.nodes[p.0].value;
            assert_eq!(m.cols(), cols, "stack_rows column mismatch");
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(Matrix::from_vec(rows, cols, data), Op::StackRows(parts.to_vec()), ng)
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let v = self.value(table).select_rows(idx);
        let ng = self.ng(table);
        self.push(v, Op::GatherRows(table, idx.to_vec()), ng)
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape size mismatch");
        let v = Matrix::from_vec(rows, cols, x.as_slice().to_vec());
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
            let mut s = 0.0;
            for z in row.iter_mut() {
                *z = (*z - m).exp();
                s += *z;
            }
            for z in row.iter_mut() {
                *z /= s;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    /// Rows are split into consecutive groups of `group` rows. Row `i`
    /// of the result holds `q_i · k_j` for the `group` rows `j` in the
    /// same group as `i`.
    pub fn group_scores(&mut self, q: Var, k: Var, group: usize) -> Var {
        let (qm, km) = (self.value(q), self.value(k));
        assert_eq!(qm.shape(), km.shape(), "group_scores shape mismatch");
        assert_eq!(qm.rows() % group, 0, "rows not a multiple of group size");
        let v = Matrix::from_fn(qm.rows(), group, |i, j| {
            let base = i / group * group;
            dot(qm.row(i), km.row(base + j))
        });
        let ng = self.ng(q) || self.ng(k);
        self.push(v, Op::GroupScores(q, k, group), ng)
    }

    /// Row `i` of the result is `Σ_j w_{ij} v_j` over the rows `j` of its group.
    pub fn group_mix(&mut self, weights: Var, values: Var, group: usize) -> Var {
        let (w, vm) = (self.value(weights), self.value(values));
        assert_eq!(w.cols(), group, "weight width must equal group size");
        assert_eq!(w.rows(), vm.rows(), "group_mix row mismatch");
        let mut out = Matrix::zeros(vm.rows(), vm.cols());
        for i in 0..vm.rows() {
            let base = i / group * group;
            for j in 0..group {
                let wij = w.get(i, j);
                let src = vm.row(base + j);
                for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                    *o += wij * s;
                }
            }
        }
        let ng = self.ng(weights) || self.ng(values);
        self.push(out, Op::GroupMix(weights, values, group), ng)
    }

    /// Mean Dirichlet negative log-likelihood of the unmasked rows of
    /// `targets + eps` under the concentrations in the rows of `alpha`.
    /// A 1×1 result of zero when every row is masked.
    pub fn dirichlet_nll(&mut self, alpha: Var, targets: &Matrix, mask: &[bool], eps: f64) -> Var {
        let a = self.value(alpha);
        assert_eq!(a.shape(), targets.shape(), "dirichlet_nll shape mismatch");
        assert_eq!(mask.len(), a.rows(), "mask length mismatch");
        let mut total = 0.0;
        let mut count = 0;
        let mut shifted = vec![0.0; a.cols()];
        for i in 0..a.rows() {
            if !mask[i] {
                continue;
            }
            for (s, t) in shifted.iter_mut().zip(targets.row(i)) {
                *s = t + eps;
            }
            total -= dirichlet::log_likelihood(&shifted, a.row(i));
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let ng = self.ng(alpha);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::DirichletNll {
                alpha,
                targets: targets.clone(),
                mask: mask.to_vec(),
                eps,
                count,
            },
            ng,
        )
    }

    /// Gradients of the 1×1 value at `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar");
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    let ga = matmul_nt(g, self.value(*b));
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let gb = matmul_tn(self.value(*a), g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*bias) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let ga = zip_map(g, self.value(*b), |p, q| p * q);
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let gb = zip_map(g, self.value(*a), |p, q| p * q);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip_map(g, y, |p, s| p * s * (1.0 - s))),
            Op::Tanh(a) => self.accumulate(grads, *a, zip_map(g, y, |p, t| p * (1.0 - t * t))),
            Op::Relu(a) => {
                let ga = zip_map(g, self.value(*a), |p, x| if x > 0.0 { p } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => self.accumulate(grads, *a, zip_map(g, y, |p, e| p * e)),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.ng(*p) {
                        let gp = Matrix::from_fn(g.rows(), w, |i, j| g.get(i, off + j));
                        self.accumulate(grads, *p, gp);
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for i in 0..g.rows() {
                    ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let r = self.value(*p).rows();
                    if self.ng(*p) {
                        self.accumulate(grads, *p, g.row_range(off, r));
                    }
                    off += r;
                }
            }
            Op::GatherRows(table, idx) => {
                let t = self.value(*table);
                let mut gt = Matrix::zeros(t.rows(), t.cols());
                for (i, &src) in idx.iter().enumerate() {
                    for (o, x) in gt.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::Reshape(a) => {
                let x = self.value(*a);
                let ga = Matrix::from_vec(x.rows(), x.cols(), g.as_slice().to_vec());
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let d = dot(g.row(i), y.row(i));
                    for ((o, gy), yy) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = yy * (gy - d);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GroupScores(q, k, group) => {
                let (qm, km) = (self.value(*q), self.value(*k));
                let mut gq = Matrix::zeros(qm.rows(), qm.cols());
                let mut gk = Matrix::zeros(km.rows(), km.cols());
                for i in 0..qm.rows() {
                    let base = i / group * group;
                    for j in 0..*group {
                        let gij = g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        axpy(gq.row_mut(i), gij, km.row(base + j));
                        axpy(gk.row_mut(base + j), gij, qm.row(i));
                    }
                }
                self.accumulate(grads, *q, gq);
                self.accumulate(grads, *k, gk);
            }
            Op::GroupMix(w, v, group) => {
                let (wm, vm) = (self.value(*w), self.value(*v));
                let mut gw = Matrix::zeros(wm.rows(), wm.cols());
                let mut gv = Matrix::zeros(vm.rows(), vm.cols());
                for i in 0..vm.rows() {
                    let base = i / group * group;
                    for j in 0..*group {
                        gw.set(i, j, dot(g.row(i), vm.row(base + j)));
                        axpy(gv.row_mut(base + j), wm.get(i, j), g.row(i));
                    }
                }
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *v, gv);
            }
            Op::DirichletNll {
                alpha,
                targets,
                mask,
                eps,
                count,
            } => {
                let a = self.value(*alpha);
                let mut ga = Matrix::zeros(a.rows(), a.cols());
                if *count > 0 {
                    let scale = g.get(0, 0) / *count as f64;
                    let mut shifted = vec![0.0; a.cols()];
                    for i in 0..a.rows() {
                        if !mask[i] {
                            continue;
                        }
                        for (s, t) in shifted.iter_mut().zip(targets.row(i)) {
                            *s = t + eps;
                        }
                        let d = dirichlet::log_likelihood_grad(&shifted, a.row(i));
                        for (o, di) in ga.row_mut(i).iter_mut().zip(d) {
                            *o = -scale * di;
                        }
                    }
                }
                self.accumulate(grads, *alpha, ga);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

/// `a · bᵀ`
fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.cols());
    Matrix::from_fn(a.rows(), b.rows(), |i, j| dot(a.row(i), b.row(j)))
}

/// `aᵀ · b`
fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows(), b.rows());
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for k in 0..a.rows() {
        let br = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki != 0.0 {
                axpy(out.row_mut(i), aki, br);
            }
        }
    }
    out
}
