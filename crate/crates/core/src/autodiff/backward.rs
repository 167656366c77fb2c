use super::{dot, gemm_into, Op, Scalar, Tape, Tensor, Var, GELU_A, GELU_C};
use crate::error::{Error, Result};

/// Gradients of one scalar with respect to every node that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], nodes: &[super::Node<T>], v: Var) -> &'a mut Tensor<T> {
    let (r, c) = nodes[v.0].value.shape();
    grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
}

impl<T: Scalar> Tape<T> {
    /// Reverse pass from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            if !nodes[idx].requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let rg = |v: Var| nodes[v.0].requires_grad;
            match &nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul { a, b, tb } => {
                    let (va, vb) = (&*nodes[a.0].value, &*nodes[b.0].value);
                    if rg(*a) {
                        // c = a b  -> da = g b^T ;  c = a b^T -> da = g b
                        let da = slot(&mut grads, nodes, *a);
                        gemm_into(&g, false, vb, !tb, da, T::one(), T::one());
                    }
                    if rg(*b) {
                        let db = slot(&mut grads, nodes, *b);
                        if *tb {
                            gemm_into(&g, true, va, false, db, T::one(), T::one());
                        } else {
                            gemm_into(va, true, &g, false, db, T::one(), T::one());
                        }
                    }
                }
                Op::Add { a, b } => {
                    for v in [a, b] {
                        if rg(*v) {
                            slot(&mut grads, nodes, *v).add_assign(&g);
                        }
                    }
                }
                Op::AddBias { a, bias } => {
                    if rg(*bias) {
                        let db = slot(&mut grads, nodes, *bias);
                        for r in 0..g.rows() {
                            for (x, &y) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                    }
                    if rg(*a) {
                        slot(&mut grads, nodes, *a).add_assign(&g);
                    }
                }
                Op::Scale { a, s } => {
                    if rg(*a) {
                        let da = slot(&mut grads, nodes, *a);
                        for (x, &y) in da.data_mut().iter_mut().zip(g.data()) {
                            *x += y * *s;
                        }
                    }
                }
                Op::Gelu { a } => {
                    if rg(*a) {
                        let c = T::from_f64(GELU_C);
                        let k = T::from_f64(GELU_A);
                        let half = T::from_f64(0.5);
                        let three_k = T::from_f64(3.0 * GELU_A);
                        let x = &*nodes[a.0].value;
                        let da = slot(&mut grads, nodes, *a);
                        for ((d, &xv), &gv) in da.data_mut().iter_mut().zip(x.data()).zip(g.data()) {
                            let th = (c * (xv + k * xv * xv * xv)).tanh();
                            let dy = half * (T::one() + th)
                                + half * xv * (T::one() - th * th) * c * (T::one() + three_k * xv * xv);
                            *d += gv * dy;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    rstd,
                } => {
                    let vx = &*nodes[x.0].value;
                    let vg = nodes[gamma.0].value.clone();
                    let (rows, cols) = vx.shape();
                    let n = T::from_f64(cols as f64);
                    let mut xhat = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for (o, &v) in xhat.row_mut(r).iter_mut().zip(vx.row(r)) {
                            *o = (v - mean[r]) * rstd[r];
                        }
                    }
                    if rg(*gamma) {
                        let dg = slot(&mut grads, nodes, *gamma);
                        for r in 0..rows {
                            for ((d, &gv), &xh) in dg.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                                *d += gv * xh;
                            }
                        }
                    }
                    if rg(*beta) {
                        let db = slot(&mut grads, nodes, *beta);
                        for r in 0..rows {
                            for (d, &gv) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *d += gv;
                            }
                        }
                    }
                    if rg(*x) {
                        let dx = slot(&mut grads, nodes, *x);
                        let mut dxhat = vec![T::zero(); cols];
                        for r in 0..rows {
                            let gr = g.row(r);
                            let xr = xhat.row(r);
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for c in 0..cols {
                                dxhat[c] = gr[c] * vg.data()[c];
                                m1 += dxhat[c];
                                m2 += dxhat[c] * xr[c];
                            }
                            m1 /= n;
                            m2 /= n;
                            let out = dx.row_mut(r);
                            for c in 0..cols {
                                out[c] += rstd[r] * (dxhat[c] - m1 - xr[c] * m2);
                            }
                        }
                    }
                }
                Op::Attention { q, k, v, layout, probs } => {
                    let (vq, vk, vv) = (&*nodes[q.0].value, &*nodes[k.0].value, &*nodes[v.0].value);
                    let d = vq.cols();
                    let (batch, heads, tq, tk, offset) =
                        (layout.batch, layout.heads, layout.tq, layout.tk, layout.offset);
                    let hd = d / heads;
                    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
                    let mut dq = Tensor::zeros(vq.rows(), d);
                    let mut dk = Tensor::zeros(vk.rows(), d);
                    let mut dv = Tensor::zeros(vv.rows(), d);
                    let mut dp = vec![T::zero(); tk];
                    for b in 0..batch {
                        let ks = layout.start(b);
                        for h in 0..heads {
                            let c0 = h * hd;
                            for i in 0..tq {
                                let t = offset + i;
                                let p_base = ((b * heads + h) * tq + i) * tk;
                                let gi = &g.row(b * tq + i)[c0..c0 + hd];
                                let mut acc = T::zero();
                                for j in ks..=t {
                                    let p = probs[p_base + j];
                                    let vrow = &vv.row(b * tk + j)[c0..c0 + hd];
                                    dp[j] = dot(gi, vrow);
                                    acc += p * dp[j];
                                    let dvr = &mut dv.row_mut(b * tk + j)[c0..c0 + hd];
                                    for (x, &y) in dvr.iter_mut().zip(gi) {
                                        *x += p * y;
                                    }
                                }
                                let qrow = &vq.row(b * tq + i)[c0..c0 + hd];
                                for j in ks..=t {
                                    let ds = probs[p_base + j] * (dp[j] - acc) * scale;
                                    if ds == T::zero() {
                                        continue;
                                    }
                                    let krow = &vk.row(b * tk + j)[c0..c0 + hd];
                                    let dqr = &mut dq.row_mut(b * tq + i)[c0..c0 + hd];
                                    for (x, &y) in dqr.iter_mut().zip(krow) {
                                        *x += ds * y;
                                    }
                                    let dkr = &mut dk.row_mut(b * tk + j)[c0..c0 + hd];
                                    for (x, &y) in dkr.iter_mut().zip(qrow) {
                                        *x += ds * y;
                                    }
                                }
                            }
                        }
                    }
                    for (var, grad) in [(q, dq), (k, dk), (v, dv)] {
                        if rg(*var) {
                            slot(&mut grads, nodes, *var).add_assign(&grad);
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    if rg(*table) {
                        let dt = slot(&mut grads, nodes, *table);
                        for (i, &id) in ids.iter().enumerate() {
                            for (x, &y) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                                *x += y;
                            }
                        }
                    }
                }
                Op::SliceCols { a, start } => {
                    if rg(*a) {
                        let len = g.cols();
                        let da = slot(&mut grads, nodes, *a);
                        for r in 0..g.rows() {
                            for (x, &y) in da.row_mut(r)[*start..*start + len].iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                    }
                }
                Op::ConcatTime { parts, batch } => {
                    let total: usize = parts.iter().map(|p| p.1).sum();
                    let mut t0 = 0;
                    for &(p, len) in parts {
                        if rg(p) {
                            let dp = slot(&mut grads, nodes, p);
                            for b in 0..*batch {
                                for i in 0..len {
                                    for (x, &y) in dp.row_mut(b * len + i).iter_mut().zip(g.row(b * total + t0 + i)) {
                                        *x += y;
                                    }
                                }
                            }
                        }
                        t0 += len;
                    }
                }
                Op::LogSoftmax { a } => {
                    if rg(*a) {
                        let y = &*nodes[idx].value;
                        let da = slot(&mut grads, nodes, *a);
                        for r in 0..g.rows() {
                            let gs: T = g.row(r).iter().copied().sum();
                            let yr = y.row(r);
                            for ((x, &gv), &yv) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(yr) {
                                *x += gv - yv.exp() * gs;
                            }
                        }
                    }
                }
                Op::Softmax { a } => {
                    if rg(*a) {
                        let y = &*nodes[idx].value;
                        let da = slot(&mut grads, nodes, *a);
                        for r in 0..g.rows() {
                            let yr = y.row(r);
                            let s = dot(g.row(r), yr);
                            for ((x, &gv), &yv) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(yr) {
                                *x += yv * (gv - s);
                            }
                        }
                    }
                }
                Op::PickSum { a, picks } => {
                    if rg(*a) {
                        let s = g.item();
                        let da = slot(&mut grads, nodes, *a);
                        for &(r, c) in picks {
                            let cur = da.get(r, c);
                            da.set(r, c, cur + s);
                        }
                    }
                }
                Op::KlRows {
                    logits,
                    rows,
                    log_p,
                    log_q,
                    kl,
                } => {
                    if rg(*logits) {
                        let s = g.item();
                        let dz = slot(&mut grads, nodes, *logits);
                        for (i, &r) in rows.iter().enumerate() {
                            let lp = log_p.row(i);
                            let lq = log_q.row(i);
                            for ((x, &a), &b) in dz.row_mut(r).iter_mut().zip(lp).zip(lq) {
                                *x += s * a.exp() * (a - b - kl[i]);
                            }
                        }
                    }
                }
                Op::MeanGroups { a, groups } => {
                    if rg(*a) {
                        let da = slot(&mut grads, nodes, *a);
                        for (gi, &(start, len)) in groups.iter().enumerate() {
                            let inv = T::one() / T::from_f64(len as f64);
                            for r in start..start + len {
                                for (x, &y) in da.row_mut(r).iter_mut().zip(g.row(gi)) {
                                    *x += y * inv;
                                }
                            }
                        }
                    }
                }
                Op::BceLogits { z, targets } => {
                    if rg(*z) {
                        let s = g.item();
                        let vz = nodes[z.0].value.clone();
                        let dz = slot(&mut grads, nodes, *z);
                        for ((x, &zv), &y) in dz.data_mut().iter_mut().zip(vz.data()).zip(targets) {
                            let sig = T::one() / (T::one() + (-zv).exp());
                            *x += s * (sig - y);
                        }
                    }
                }
                Op::SumAll { a } => {
                    if rg(*a) {
                        let s = g.item();
                        let da = slot(&mut grads, nodes, *a);
                        for x in da.data_mut() {
                            *x += s;
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
