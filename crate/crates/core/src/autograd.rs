//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records operations in evaluation order; node indices are
//! therefore a topological order and [`Tape::backward`] is a single reverse
//! sweep. Parameters live in a [`ParamStore`] and are referenced, not copied,
//! by the tape.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::kernels;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    /// Frozen tensors take part in the forward pass but are never updated.
    pub frozen: bool,
}

/// Named parameter tensors, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor, replacing the value if the name already exists.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.insert_entry(name.into(), value, false)
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.insert_entry(name.into(), value, true)
    }

    fn insert_entry(&mut self, name: String, value: Matrix, frozen: bool) -> ParamId {
        if let Some(&id) = self.index.get(&name) {
            self.entries[id.0].value = value;
            self.entries[id.0].frozen = frozen;
            return id;
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            frozen,
        });
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| !e.value.is_finite())
            .map(|e| e.name.as_str())
    }

    /// A new store holding only the entries whose names pass `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ParamStore {
        let mut out = ParamStore::new();
        for e in self.entries.iter().filter(|e| keep(&e.name)) {
            out.insert_entry(e.name.clone(), e.value.clone(), e.frozen);
        }
        out
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Sums another gradient set into this one.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g = g.scale(s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    Sum(Var),
    CrossEntropy(Var, Vec<usize>),
    SoftCrossEntropy(Var, Vec<f64>, f64),
    BceWithLogits(Var, Vec<f64>),
    CosineRows(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Option<Matrix>,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a row vector");
        assert_eq!(r.cols(), v.cols(), "add_row width mismatch");
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Linear map `x · w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = Matrix::from_vec(va.rows(), va.cols(), data);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(kernels::gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer normalization with learned `1 x d` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut xhat = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat.set(i, j, h);
                out.set(i, j, h * g[j] + b[j]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(va.rows(), va.cols());
        for i in 0..va.rows() {
            out.row_mut(i).copy_from_slice(&kernels::softmax(va.row(i)));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Selects rows by index (repeats allowed). Embedding lookup is a gather
    /// over the embedding table.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(idx.len(), va.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(va.row(i));
        }
        self.push(out, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.gather_rows(a, &[i])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
            }
            offset += m.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(va.rows(), width);
        for i in 0..va.rows() {
            out.row_mut(i).copy_from_slice(&va.row(i)[start..start + width]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Sum of several `1 x 1` scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut acc = terms[0];
        for t in &terms[1..] {
            acc = self.add(acc, *t);
        }
        acc
    }

    /// Mean over rows of the per-row cross-entropy `-log softmax(z_r)[t_r]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows(), targets.len(), "one target per logit row");
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| kernels::cross_entropy(z.row(r), t))
            .sum();
        let v = Matrix::from_vec(1, 1, vec![total / targets.len() as f64]);
        self.push(v, Op::CrossEntropy(logits, targets.to_vec()))
    }

    /// `-Σ t_i ln(softmax(z)_i + eps)` for a single `1 x w` logit row.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: &[f64], eps: f64) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), (1, target.len()), "target width mismatch");
        let v = Matrix::from_vec(1, 1, vec![kernels::soft_cross_entropy(z.data(), target, eps)]);
        self.push(v, Op::SoftCrossEntropy(logits, target.to_vec(), eps))
    }

    /// Binary cross-entropy with logits summed over a `1 x c` row.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), (1, targets.len()), "target width mismatch");
        let v = Matrix::from_vec(1, 1, vec![kernels::bce_with_logits(z.data(), targets)]);
        self.push(v, Op::BceWithLogits(logits, targets.to_vec()))
    }

    /// Cosine similarity of a `1 x d` row against each row of `n x d`,
    /// giving `1 x n`. Zero-norm inputs yield NaN; callers check first.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows(), 1, "cosine_rows expects a row query");
        let sims: Vec<f64> = (0..vb.rows())
            .map(|j| kernels::cosine(va.data(), vb.row(j)).unwrap_or(f64::NAN))
            .collect();
        self.push(Matrix::row_vector(sims), Op::CosineRows(a, b))
    }

    /// Reverse sweep from a `1 x 1` root, returning parameter gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward from non-scalar");
        let mut out = Gradients::zeros_like(self.store);
        let mut grads: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(id) if !self.store.is_frozen(*id) => out.accumulate(*id, &g),
                Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.col_sums());
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = hadamard(&g, self.value(*b));
                    let gb = hadamard(&g, self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| g * kernels::gelu_grad(*x))
                        .collect();
                    acc(&mut grads, *a, Matrix::from_vec(x.rows(), x.cols(), data));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, d) = xhat.shape();
                    let gam = self.value(*gamma).data();
                    let mut gx = Matrix::zeros(n, d);
                    for r in 0..n {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let dxhat: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dh =
                            dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx.set(r, j, inv_std[r] * (dxhat[j] - mean_d - hr[j] * mean_dh));
                        }
                    }
                    acc(&mut grads, *gamma, hadamard(&g, xhat).col_sums());
                    acc(&mut grads, *beta, g.col_sums());
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(i));
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = yr[j] * (gr[j] - s);
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::GatherRows(a, idx) => {
                    let src = self.value(*a);
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    for (r, &t) in idx.iter().enumerate() {
                        for (o, v) in gx.row_mut(t).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut gp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.value(*p).shape();
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        offset += rows;
                        acc(&mut grads, *p, Matrix::from_vec(rows, cols, data));
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::from_vec(r, c, vec![g.data()[0]; r * c]));
                }
                Op::CrossEntropy(logits, targets) => {
                    let z = self.value(*logits);
                    let scale = g.data()[0] / targets.len() as f64;
                    let mut gz = Matrix::zeros(z.rows(), z.cols());
                    for (r, &t) in targets.iter().enumerate() {
                        let p = kernels::softmax(z.row(r));
                        let row = gz.row_mut(r);
                        for (j, pj) in p.iter().enumerate() {
                            row[j] = scale * (pj - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                    acc(&mut grads, *logits, gz);
                }
                Op::SoftCrossEntropy(logits, target, eps) => {
                    let z = self.value(*logits);
                    let p = kernels::softmax(z.data());
                    let a: Vec<f64> = target
                        .iter()
                        .zip(&p)
                        .map(|(t, p)| t * p / (p + eps))
                        .collect();
                    let total: f64 = a.iter().sum();
                    let data = p
                        .iter()
                        .zip(&a)
                        .map(|(pj, aj)| g.data()[0] * (pj * total - aj))
                        .collect();
                    acc(&mut grads, *logits, Matrix::from_vec(1, p.len(), data));
                }
                Op::BceWithLogits(logits, targets) => {
                    let z = self.value(*logits);
                    let data = z
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(z, y)| g.data()[0] * (kernels::sigmoid(*z) - y))
                        .collect();
                    acc(&mut grads, *logits, Matrix::from_vec(1, targets.len(), data));
                }
                Op::CosineRows(a, b) => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    let sims = self.value(Var(i));
                    let d = va.cols();
                    let na = crate::tensor::norm(va.data());
                    let mut ga = vec![0.0; d];
                    let mut gb = Matrix::zeros(vb.rows(), d);
                    for j in 0..vb.rows() {
                        let bj = vb.row(j);
                        let nb = crate::tensor::norm(bj);
                        let c = sims.data()[j];
                        let gj = g.data()[j];
                        for k in 0..d {
                            ga[k] += gj * (bj[k] / (na * nb) - c * va.data()[k] / (na * na));
                            let v = gj * (va.data()[k] / (na * nb) - c * bj[k] / (nb * nb));
                            gb.set(j, k, v);
                        }
                    }
                    acc(&mut grads, *a, Matrix::row_vector(ga));
                    acc(&mut grads, *b, gb);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of every parameter coordinate.
    fn check(store: &ParamStore, f: impl Fn(&mut Tape) -> Var) {
        let tape_grads = {
            let mut tape = Tape::new(store);
            let root = f(&mut tape);
            tape.backward(root)
        };
        let h = 1e-5;
        for id in store.ids() {
            let n = store.get(id).len();
            for k in 0..n {
                let eval = |delta: f64| {
                    let mut s = store.clone();
                    s.get_mut(id).data_mut()[k] += delta;
                    let mut tape = Tape::new(&s);
                    let root = f(&mut tape);
                    tape.scalar(root)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = tape_grads.get(id).map_or(0.0, |g| g.data()[k]);
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "{}[{k}]: analytic {an} vs numeric {fd}",
                    store.name(id)
                );
            }
        }
    }

    fn store_with(shapes: &[(&str, usize, usize)]) -> ParamStore {
        let mut store = ParamStore::new();
        let mut t = 0.3f64;
        for (name, r, c) in shapes {
            let data = (0..r * c)
                .map(|_| {
                    t = (t * 7.31 + 0.17).fract();
                    t * 2.0 - 1.0
                })
                .collect();
            store.insert(*name, Matrix::from_vec(*r, *c, data));
        }
        store
    }

    #[test]
    fn attention_block_gradients() {
        let store = store_with(&[
            ("x", 3, 4),
            ("w", 4, 4),
            ("b", 1, 4),
            ("g", 1, 4),
            ("beta", 1, 4),
        ]);
        let ids: Vec<ParamId> = store.ids().collect();
        check(&store, |t| {
            let x = t.param(ids[0]);
            let w = t.param(ids[1]);
            let b = t.param(ids[2]);
            let q = t.affine(x, w, b);
            let kt = t.transpose(x);
            let s = t.matmul(q, kt);
            let s = t.scale(s, 0.5);
            let a = t.softmax_rows(s);
            let o = t.matmul(a, x);
            let h = t.gelu(o);
            let left = t.slice_cols(h, 0, 2);
            let right = t.slice_cols(h, 2, 2);
            let joined = t.concat_cols(&[right, left]);
            let gam = t.param(ids[3]);
            let bet = t.param(ids[4]);
            let n = t.layer_norm(joined, gam, bet, 1e-5);
            let m = t.mul(n, n);
            t.sum(m)
        });
    }

    #[test]
    fn loss_op_gradients() {
        let store = store_with(&[("z", 2, 5), ("a", 1, 5), ("bank", 3, 5)]);
        let ids: Vec<ParamId> = store.ids().collect();
        check(&store, |t| {
            let z = t.param(ids[0]);
            let ce = t.cross_entropy(z, &[1, 4]);
            let r0 = t.row(z, 0);
            let soft = t.soft_cross_entropy(r0, &[0.1, 0.2, 0.3, 0.25, 0.15], 1e-8);
            let r1 = t.gather_rows(z, &[1]);
            let bce = t.bce_with_logits(r1, &[1.0, 0.0, 0.0, 1.0, 1.0]);
            let a = t.param(ids[1]);
            let bank = t.param(ids[2]);
            let both = t.concat_rows(&[bank, a]);
            let cos = t.cosine_rows(a, both);
            let cos_ce = t.cross_entropy(cos, &[2]);
            t.add_all(&[ce, soft, bce, cos_ce])
        });
    }
}
