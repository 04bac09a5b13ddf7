//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! Nodes are appended in evaluation order, so the tape index order is already
//! a topological order and the reverse pass simply walks it backwards.
//! Parameter leaves borrow their values from a [`ParamStore`]; the reverse
//! pass returns owned [`Gradients`] which the caller folds back into the store
//! once the graph is dropped.

use std::borrow::Cow;
use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_raw, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    MaskedSoftmax(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    ScaleRows(Var, Var),
    Blend(Var, Var, Vec<F>),
    Sum(Var),
    Mean(Var),
    WeightedSum(Var, Vec<F>),
}

struct Node<'s, F: Real> {
    value: Cow<'s, Tensor<F>>,
    op: Op<F>,
}

pub struct Graph<'s, F: Real> {
    store: &'s ParamStore<F>,
    nodes: Vec<Node<'s, F>>,
    bound: HashMap<ParamId, Var>,
}

fn shapes<F: Real>(ts: &[&Tensor<F>]) -> String {
    ts.iter()
        .map(|t| format!("{:?}", t.shape()))
        .collect::<Vec<_>>()
        .join(" vs ")
}

fn require_2d<F: Real>(op: &'static str, t: &Tensor<F>) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, format!("expected rank 2, got {:?}", t.shape())));
    }
    Ok(())
}

impl<'s, F: Real> Graph<'s, F> {
    pub fn new(store: &'s ParamStore<F>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Result<Var> {
        require_2d("constant", &t)?;
        Ok(self.push(t, Op::Leaf))
    }

    /// Leaf bound to a stored parameter. Each parameter is bound at most once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let store = self.store;
        self.nodes.push(Node {
            value: Cow::Borrowed(store.value(id)),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_2d("matmul", ta)?;
        require_2d("matmul", tb)?;
        if ta.cols() != tb.rows() {
            return Err(Error::shape("matmul", shapes(&[ta, tb])));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::matrix(m, n, matmul_raw(ta.data(), tb.data(), m, k, n))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Elementwise sum; `b` may also be a `[1, n]` row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
            let out = Tensor::new(ta.shape().to_vec(), data)?;
            return Ok(self.push(out, Op::Add(a, b)));
        }
        require_2d("add", ta)?;
        require_2d("add", tb)?;
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(Error::shape("add", shapes(&[ta, tb])));
        }
        let n = ta.cols();
        let bias = tb.data();
        let data = ta.data().iter().enumerate().map(|(i, &x)| x + bias[i % n]).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, shapes(&[ta, tb])));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.ln());
        self.push(out, Op::Log(a))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        require_2d("softmax", t)?;
        let out = softmax_rows(t, None)?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Row-wise log-softmax, computed stably.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        require_2d("log_softmax", t)?;
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row(i);
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&x| (x - mx).exp()).sum::<F>().ln() + mx;
            data.extend(row.iter().map(|&x| x - lse));
        }
        let out = Tensor::matrix(r, c, data)?;
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    /// Row-wise softmax where `mask[i][j] == false` positions get exactly zero weight.
    pub fn masked_softmax(&mut self, a: Var, mask: &[Vec<bool>]) -> Result<Var> {
        let t = self.value(a);
        require_2d("masked_softmax", t)?;
        if mask.len() != t.rows() || mask.iter().any(|m| m.len() != t.cols()) {
            return Err(Error::shape(
                "masked_softmax",
                format!("mask does not match {:?}", t.shape()),
            ));
        }
        let out = softmax_rows(t, Some(mask))?;
        Ok(self.push(out, Op::MaskedSoftmax(a)))
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            let t = self.value(p);
            require_2d("concat", t)?;
            if t.rows() != rows {
                return Err(Error::shape("concat", shapes(&[self.value(parts[0]), t])));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        require_2d("slice", t)?;
        if start + len > t.cols() || len == 0 {
            return Err(Error::shape(
                "slice",
                format!("columns {}..{} of {:?}", start, start + len, t.shape()),
            ));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for i in 0..t.rows() {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let out = Tensor::matrix(t.rows(), len, data)?;
        Ok(self.push(out, Op::Slice(a, start)))
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        require_2d("gather", t)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape("gather", format!("row {} of {:?}", bad, t.shape())));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(ids.len(), t.cols(), data)?;
        Ok(self.push(out, Op::Gather(table, ids.to_vec())))
    }

    /// One entry per row: `out[i] = a[i, idx[i]]`, shape `[rows, 1]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        require_2d("pick", t)?;
        if idx.len() != t.rows() || idx.iter().any(|&j| j >= t.cols()) {
            return Err(Error::shape(
                "pick",
                format!("{} indices into {:?}", idx.len(), t.shape()),
            ));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| t.get(i, j)).collect();
        let out = Tensor::matrix(idx.len(), 1, data)?;
        Ok(self.push(out, Op::Pick(a, idx.to_vec())))
    }

    /// Multiply each row of `x [B, n]` by the matching entry of `s [B, 1]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        require_2d("scale_rows", tx)?;
        if ts.shape() != [tx.rows(), 1] {
            return Err(Error::shape("scale_rows", shapes(&[tx, ts])));
        }
        let n = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * ts.data()[i / n])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::ScaleRows(x, s)))
    }

    /// Per-row select: `m * new + (1 - m) * old` with a constant row mask.
    pub fn blend(&mut self, new: Var, old: Var, row_mask: &[F]) -> Result<Var> {
        let (tn, to) = (self.value(new), self.value(old));
        if tn.shape() != to.shape() || row_mask.len() != tn.rows() {
            return Err(Error::shape("blend", shapes(&[tn, to])));
        }
        let n = tn.cols();
        let data = tn
            .data()
            .iter()
            .zip(to.data())
            .enumerate()
            .map(|(i, (&a, &b))| {
                let m = row_mask[i / n];
                m * a + (F::one() - m) * b
            })
            .collect();
        let out = Tensor::new(tn.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Blend(new, old, row_mask.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<F>() / F::lit(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// `Σ_i w_i · a_i` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: &[F]) -> Result<Var> {
        let t = self.value(a);
        if weights.len() != t.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {:?}", weights.len(), t.shape()),
            ));
        }
        let s = t.data().iter().zip(weights).map(|(&x, &w)| x * w).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, weights.to_vec())))
    }

    /// Reverse pass from a scalar root. Returns `∂root/∂p` for every bound parameter.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(Error::NonScalarRoot(rt.shape().to_vec()));
        }
        if !rt.is_finite() {
            return Err(Error::NonFinite("backward root".into()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(rt.shape(), F::one()));
        let mut out = Gradients::default();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &*node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.entries.push((*id, g)),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA = G · Bᵀ, dB = Aᵀ · G
                    let mut da = vec![F::zero(); m * k];
                    for i in 0..m {
                        let grow = g.row(i);
                        for p in 0..k {
                            let brow = tb.row(p);
                            da[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    let mut db = vec![F::zero(); k * n];
                    for i in 0..m {
                        let grow = g.row(i);
                        for p in 0..k {
                            let av = ta.get(i, p);
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(m, k, da)?);
                    acc(&mut grads, *b, Tensor::matrix(k, n, db)?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let n = g.cols();
                    let mut db = vec![F::zero(); n];
                    for (i, &v) in g.data().iter().enumerate() {
                        db[i % n] += v;
                    }
                    acc(&mut grads, *b, Tensor::matrix(1, n, db)?);
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, zip(&g, tb, |gv, bv| gv * bv));
                    acc(&mut grads, *b, zip(&g, ta, |gv, av| gv * av));
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads, *a, g.map(|v| v * c));
                }
                Op::Tanh(a) => acc(&mut grads, *a, zip(&g, y, |gv, yv| gv * (F::one() - yv * yv))),
                Op::Sigmoid(a) => acc(&mut grads, *a, zip(&g, y, |gv, yv| gv * yv * (F::one() - yv))),
                Op::Exp(a) => acc(&mut grads, *a, zip(&g, y, |gv, yv| gv * yv)),
                Op::Log(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, zip(&g, x, |gv, xv| gv / xv));
                }
                Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                    let (r, c) = (y.rows(), y.cols());
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        d.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                    }
                    acc(&mut grads, *a, Tensor::matrix(r, c, d)?);
                }
                Op::LogSoftmax(a) => {
                    let (r, c) = (y.rows(), y.cols());
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let gs: F = gr.iter().copied().sum();
                        d.extend(yr.iter().zip(gr).map(|(&yv, &gv)| gv - yv.exp() * gs));
                    }
                    acc(&mut grads, *a, Tensor::matrix(r, c, d)?);
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut d = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            d.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, p, Tensor::matrix(rows, w, d)?);
                    }
                }
                Op::Slice(a, start) => {
                    let src = self.value(*a);
                    let mut d = Tensor::zeros(src.shape());
                    let (w, sc) = (g.cols(), src.cols());
                    for i in 0..g.rows() {
                        d.data_mut()[i * sc + start..i * sc + start + w].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Gather(table, ids) => {
                    let src = self.value(*table);
                    let mut d = Tensor::zeros(src.shape());
                    let e = src.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut d.data_mut()[id * e..(id + 1) * e];
                        for (dv, &gv) in dst.iter_mut().zip(g.row(r)) {
                            *dv += gv;
                        }
                    }
                    acc(&mut grads, *table, d);
                }
                Op::Pick(a, idx) => {
                    let src = self.value(*a);
                    let mut d = Tensor::zeros(src.shape());
                    let c = src.cols();
                    for (i, &j) in idx.iter().enumerate() {
                        d.data_mut()[i * c + j] = g.data()[i];
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ScaleRows(x, s) => {
                    let (tx, ts) = (self.value(*x), self.value(*s));
                    let n = tx.cols();
                    let dx = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * ts.data()[i / n])
                        .collect();
                    let ds = (0..tx.rows())
                        .map(|i| g.row(i).iter().zip(tx.row(i)).map(|(&a, &b)| a * b).sum())
                        .collect();
                    acc(&mut grads, *x, Tensor::new(tx.shape().to_vec(), dx)?);
                    acc(&mut grads, *s, Tensor::matrix(tx.rows(), 1, ds)?);
                }
                Op::Blend(new, old, mask) => {
                    let n = g.cols();
                    let dn = g.data().iter().enumerate().map(|(i, &gv)| gv * mask[i / n]).collect();
                    let dold = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * (F::one() - mask[i / n]))
                        .collect();
                    acc(&mut grads, *new, Tensor::new(g.shape().to_vec(), dn)?);
                    acc(&mut grads, *old, Tensor::new(g.shape().to_vec(), dold)?);
                }
                Op::Sum(a) => {
                    let src = self.value(*a);
                    acc(&mut grads, *a, Tensor::filled(src.shape(), g.item()));
                }
                Op::Mean(a) => {
                    let src = self.value(*a);
                    let v = g.item() / F::lit(src.len() as f64);
                    acc(&mut grads, *a, Tensor::filled(src.shape(), v));
                }
                Op::WeightedSum(a, w) => {
                    let src = self.value(*a);
                    let gv = g.item();
                    let d = w.iter().map(|&wv| wv * gv).collect();
                    acc(&mut grads, *a, Tensor::new(src.shape().to_vec(), d)?);
                }
            }
        }
        out.entries.sort_by_key(|(id, _)| *id);
        Ok(out)
    }
}

fn acc<F: Real>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softmax_rows<F: Real>(t: &Tensor<F>, mask: Option<&[Vec<bool>]>) -> Result<Tensor<F>> {
    let (r, c) = (t.rows(), t.cols());
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = t.row(i);
        let keep = |j: usize| mask.is_none_or(|m| m[i][j]);
        if (0..c).any(|j| keep(j) && !row[j].is_finite()) {
            return Err(Error::NonFinite(format!("softmax input row {i}")));
        }
        let mx = (0..c)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(F::neg_infinity(), F::max);
        if mx == F::neg_infinity() {
            return Err(Error::invalid(format!("softmax row {i} has no unmasked entry")));
        }
        let exps: Vec<F> = (0..c)
            .map(|j| if keep(j) { (row[j] - mx).exp() } else { F::zero() })
            .collect();
        let z: F = exps.iter().copied().sum();
        data.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor::matrix(r, c, data)
}
