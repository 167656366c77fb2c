//! A small reverse-mode autodiff tape over 2-D tensors.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse creation order. Ops are coarse (fused
//! attention, layer norm, masked KL) so the tape stays short and each
//! backward rule is written out by hand.

mod backward;
mod tensor;

use std::sync::Arc;

pub use backward::Gradients;
pub(crate) use tensor::gemm_into;
pub use tensor::{Precision, Scalar, Tensor};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Geometry of a causal attention call.
///
/// Queries are laid out batch-major as `batch * tq` rows, keys and values as
/// `batch * tk` rows. Query `i` sits at absolute time `offset + i` and may see
/// keys `key_start[b] ..= offset + i`.
#[derive(Clone, Debug)]
pub struct AttnLayout {
    pub batch: usize,
    pub heads: usize,
    pub tq: usize,
    pub tk: usize,
    pub offset: usize,
    pub key_start: Option<Vec<usize>>,
}

impl AttnLayout {
    pub fn causal(batch: usize, heads: usize, t: usize) -> Self {
        AttnLayout {
            batch,
            heads,
            tq: t,
            tk: t,
            offset: 0,
            key_start: None,
        }
    }

    #[inline]
    pub(crate) fn start(&self, b: usize) -> usize {
        self.key_start.as_ref().map_or(0, |s| s[b])
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        tb: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBias {
        a: Var,
        bias: Var,
    },
    Scale {
        a: Var,
        s: T,
    },
    Gelu {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttnLayout,
        probs: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatTime {
        parts: Vec<(Var, usize)>,
        batch: usize,
    },
    LogSoftmax {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    PickSum {
        a: Var,
        picks: Vec<(usize, usize)>,
    },
    KlRows {
        logits: Var,
        rows: Vec<usize>,
        log_p: Tensor<T>,
        log_q: Tensor<T>,
        kl: Vec<T>,
    },
    MeanGroups {
        a: Var,
        groups: Vec<(usize, usize)>,
    },
    BceLogits {
        z: Var,
        targets: Vec<T>,
    },
    SumAll {
        a: Var,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
pub(crate) const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf sharing an existing tensor (parameters are bound this way without copying).
    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn value_arc(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// `a * b` or, with `tb`, `a * b^T`.
    pub fn matmul(&mut self, a: Var, b: Var, tb: bool) -> Result<Var> {
        let out = self.value(a).matmul_ex(false, self.value(b), tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b, tb }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("add {:?} + {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Error::Shape(format!("bias {:?} for {:?}", vb.shape(), va.shape())));
        }
        let mut out = va.clone();
        let brow = vb.row(0);
        for r in 0..out.rows() {
            for (x, &b) in out.row_mut(r).iter_mut().zip(brow) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddBias { a, bias }, rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale { a, s }, rg)
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::from_f64(GELU_C);
        let k = T::from_f64(GELU_A);
        let half = T::from_f64(0.5);
        let out = self
            .value(a)
            .map(|x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(out, Op::Gelu { a }, rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != (1, cols) || b.shape() != (1, cols) {
            return Err(Error::Shape("layer norm affine params".into()));
        }
        let n = T::from_f64(cols as f64);
        let eps = T::from_f64(LN_EPS);
        let mut out = Tensor::zeros(rows, cols);
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = vx.row(r);
            let mu = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = (row[c] - mu) * rs * g.data()[c] + b.data()[c];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention with a causal mask.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttnLayout) -> Result<Var> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let d = vq.cols();
        let AttnLayout {
            batch,
            heads,
            tq,
            tk,
            offset,
            ..
        } = layout;
        if vq.rows() != batch * tq
            || vk.rows() != batch * tk
            || vv.rows() != batch * tk
            || vk.cols() != d
            || vv.cols() != d
            || d % heads != 0
            || offset + tq > tk
        {
            return Err(Error::Shape(format!(
                "attention q {:?} k {:?} v {:?} with {:?}",
                vq.shape(),
                vk.shape(),
                vv.shape(),
                layout
            )));
        }
        let hd = d / heads;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let mut out = Tensor::zeros(batch * tq, d);
        let mut probs = vec![T::zero(); batch * heads * tq * tk];
        let mut scores = vec![T::zero(); tk];
        for b in 0..batch {
            let ks = layout.start(b);
            for h in 0..heads {
                let c0 = h * hd;
                for i in 0..tq {
                    let t = offset + i;
                    if t < ks {
                        // padding query: sees no keys, output stays zero
                        continue;
                    }
                    let qrow = &vq.row(b * tq + i)[c0..c0 + hd];
                    let mut max = T::neg_infinity();
                    for j in ks..=t {
                        let krow = &vk.row(b * tk + j)[c0..c0 + hd];
                        let s = dot(qrow, krow) * scale;
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                    let mut z = T::zero();
                    for s in &mut scores[ks..=t] {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let p_base = ((b * heads + h) * tq + i) * tk;
                    let orow = &mut out.row_mut(b * tq + i)[c0..c0 + hd];
                    for j in ks..=t {
                        let p = scores[j] / z;
                        probs[p_base + j] = p;
                        let vrow = &vv.row(b * tk + j)[c0..c0 + hd];
                        for (o, &x) in orow.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(out, Op::Attention { q, k, v, layout, probs }, rg))
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vt.rows()) {
            return Err(Error::Shape(format!("gather id {bad} >= {}", vt.rows())));
        }
        let mut data = Vec::with_capacity(ids.len() * vt.cols());
        for &i in ids {
            data.extend_from_slice(vt.row(i));
        }
        let out = Tensor::from_vec(ids.len(), vt.cols(), data)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(Error::Shape("slice_cols out of range".into()));
        }
        let mut data = Vec::with_capacity(va.rows() * len);
        for r in 0..va.rows() {
            data.extend_from_slice(&va.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(va.rows(), len, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols { a, start }, rg))
    }

    /// Concatenates batch-major sequences along time. Each part is `batch * t_p` rows.
    pub fn concat_time(&mut self, parts: &[Var], batch: usize) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let vp = self.value(p);
            if vp.cols() != cols || vp.rows() % batch != 0 {
                return Err(Error::Shape("concat_time parts".into()));
            }
            lens.push(vp.rows() / batch);
        }
        let total: usize = lens.iter().sum();
        let mut out = Tensor::zeros(batch * total, cols);
        for b in 0..batch {
            let mut t0 = 0;
            for (&p, &len) in parts.iter().zip(&lens) {
                let vp = self.value(p);
                for i in 0..len {
                    let src = vp.row(b * len + i);
                    out.row_mut(b * total + t0 + i).copy_from_slice(src);
                }
                t0 += len;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let parts = parts.iter().copied().zip(lens).collect();
        Ok(self.push(out, Op::ConcatTime { parts, batch }, rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax { a }, rg)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Softmax { a }, rg)
    }

    /// Sum of selected entries `(row, col)`.
    pub fn pick_sum(&mut self, a: Var, picks: Vec<(usize, usize)>) -> Result<Var> {
        let va = self.value(a);
        if picks.iter().any(|&(r, c)| r >= va.rows() || c >= va.cols()) {
            return Err(Error::Shape("pick out of range".into()));
        }
        let s = pairwise_sum(picks.iter().map(|&(r, c)| va.get(r, c)));
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::PickSum { a, picks }, rg))
    }

    /// `sum_i KL(softmax(logits[rows[i]]) || exp(log_q[i]))`, with `log_q` held constant.
    pub fn kl_rows(&mut self, logits: Var, rows: &[usize], log_q: Tensor<T>) -> Result<Var> {
        let vz = self.value(logits);
        if log_q.rows() != rows.len() || log_q.cols() != vz.cols() {
            return Err(Error::Shape(format!(
                "kl target {:?} for {} rows of width {}",
                log_q.shape(),
                rows.len(),
                vz.cols()
            )));
        }
        let mut selected = Tensor::zeros(rows.len(), vz.cols());
        for (i, &r) in rows.iter().enumerate() {
            if r >= vz.rows() {
                return Err(Error::Shape("kl row out of range".into()));
            }
            selected.row_mut(i).copy_from_slice(vz.row(r));
        }
        let log_p = log_softmax_rows(&selected);
        let kl: Vec<T> = (0..rows.len())
            .map(|i| {
                let lp = log_p.row(i);
                let lq = log_q.row(i);
                lp.iter().zip(lq).map(|(&a, &b)| a.exp() * (a - b)).sum::<T>()
            })
            .collect();
        let total = pairwise_sum(kl.iter().copied());
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::KlRows {
                logits,
                rows: rows.to_vec(),
                log_p,
                log_q,
                kl,
            },
            rg,
        ))
    }

    /// Mean of consecutive row ranges `(start, len)`; one output row per group.
    pub fn mean_groups(&mut self, a: Var, groups: Vec<(usize, usize)>) -> Result<Var> {
        let va = self.value(a);
        let cols = va.cols();
        let mut out = Tensor::zeros(groups.len(), cols);
        for (g, &(start, len)) in groups.iter().enumerate() {
            if len == 0 || start + len > va.rows() {
                return Err(Error::Shape("mean group out of range".into()));
            }
            let inv = T::one() / T::from_f64(len as f64);
            let o = out.row_mut(g);
            for r in start..start + len {
                for (x, &v) in o.iter_mut().zip(va.row(r)) {
                    *x += v;
                }
            }
            for x in o.iter_mut() {
                *x *= inv;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::MeanGroups { a, groups }, rg))
    }

    /// Summed binary cross-entropy of `sigmoid(z)` against targets in `[0, 1]`.
    pub fn bce_logits(&mut self, z: Var, targets: Vec<T>) -> Result<Var> {
        let vz = self.value(z);
        if vz.cols() != 1 || vz.rows() != targets.len() {
            return Err(Error::Shape("bce logits must be n x 1".into()));
        }
        let loss = pairwise_sum(vz.data().iter().zip(&targets).map(|(&x, &y)| {
            // max(x,0) - x*y + log(1 + exp(-|x|))
            x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p()
        }));
        let rg = self.rg(z);
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits { z, targets }, rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = pairwise_sum(self.value(a).data().iter().copied());
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll { a }, rg)
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Pairwise summation keeps round-off at O(log n) for long reductions.
pub(crate) fn pairwise_sum<T: Scalar>(it: impl Iterator<Item = T>) -> T {
    let v: Vec<T> = it.collect();
    fn rec<T: Scalar>(v: &[T]) -> T {
        if v.len() <= 16 {
            v.iter().copied().sum()
        } else {
            let (a, b) = v.split_at(v.len() / 2);
            rec(a) + rec(b)
        }
    }
    rec(&v)
}

pub fn log_softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

#[cfg(test)]
mod tests;
