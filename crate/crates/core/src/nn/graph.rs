//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse and accumulates adjoints into each node's parents.
//! Only the handful of operations the encoder needs are provided.

use super::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor};
use crate::{Error, Result, Scalar};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    /// `[.., k] · [k, m]`
    MatMul(Var, Var),
    /// `[B, n, k] · [B, k, m]`
    BatchMatMul(Var, Var),
    /// `[B, n, k] · [B, m, k]ᵀ`
    BatchMatMulBt(Var, Var),
    Add(Var, Var),
    /// Right operand's shape equals the trailing dims of the left one.
    AddBroadcast(Var, Var),
    Relu(Var),
    Scale(Var, T),
    SoftmaxLast(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<T>,
        inv_sigma: Vec<T>,
    },
    /// `[B, T, d] → [B, d]`
    MeanAxis1(Var),
    ConcatLast(Vec<Var>),
    WeightedMse {
        pred: Var,
        target: Tensor<T>,
        weights: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let (av, wv) = (self.value(a), self.value(w));
        let k = av.last_dim();
        if wv.shape().len() != 2 || wv.shape()[0] != k || av.shape().is_empty() {
            return shape_err(format!("matmul {:?} · {:?}", av.shape(), wv.shape()));
        }
        let m = wv.shape()[1];
        let n = av.len() / k;
        let mut out = vec![T::zero(); n * m];
        gemm_acc(av.data(), wv.data(), &mut out, n, k, m);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = m;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul(a, w)))
    }

    fn batch_dims(&self, a: Var, b: Var, transpose_b: bool) -> Result<(usize, usize, usize, usize)> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return shape_err(format!("batch matmul {sa:?} · {sb:?}"));
        }
        let (bsz, n, k) = (sa[0], sa[1], sa[2]);
        let (kb, m) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return shape_err(format!("batch matmul inner dims {sa:?} · {sb:?} (transpose_b={transpose_b})"));
        }
        Ok((bsz, n, k, m))
    }

    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bsz, n, k, m) = self.batch_dims(a, b, false)?;
        let mut out = vec![T::zero(); bsz * n * m];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..bsz {
            gemm_acc(&av[i * n * k..(i + 1) * n * k], &bv[i * k * m..(i + 1) * k * m], &mut out[i * n * m..(i + 1) * n * m], n, k, m);
        }
        let value = Tensor::new(vec![bsz, n, m], out)?;
        Ok(self.push(value, Op::BatchMatMul(a, b)))
    }

    pub fn batch_matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bsz, n, k, m) = self.batch_dims(a, b, true)?;
        let mut out = vec![T::zero(); bsz * n * m];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..bsz {
            gemm_bt_acc(&av[i * n * k..(i + 1) * n * k], &bv[i * m * k..(i + 1) * m * k], &mut out[i * n * m..(i + 1) * n * m], n, k, m);
        }
        let value = Tensor::new(vec![bsz, n, m], out)?;
        Ok(self.push(value, Op::BatchMatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("add {:?} + {:?}", av.shape(), bv.shape()));
        }
        let mut value = av.clone();
        value.add_assign(bv);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb || bv.is_empty() {
            return shape_err(format!("broadcast add {sa:?} + {sb:?}"));
        }
        let inner = bv.len();
        let mut value = av.clone();
        for chunk in value.data_mut().chunks_mut(inner) {
            for (x, y) in chunk.iter_mut().zip(bv.data()) {
                *x = *x + *y;
            }
        }
        Ok(self.push(value, Op::AddBroadcast(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|v| v * c);
        self.push(value, Op::Scale(a, c))
    }

    /// Row-wise softmax over the last axis, max-subtracted.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.last_dim();
        let mut value = av.clone();
        for row in value.data_mut().chunks_mut(m) {
            let mx = row.iter().fold(T::neg_infinity(), |acc, v| acc.max(*v));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        self.push(value, Op::SoftmaxLast(a))
    }

    /// Per-row `γ (x − μ) / sqrt(var + ε) + β` over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let h = xv.last_dim();
        if gv.shape() != [h] || bv.shape() != [h] {
            return shape_err(format!("layer norm {:?} with γ {:?}, β {:?}", xv.shape(), gv.shape(), bv.shape()));
        }
        let hf = T::lit(h as f64);
        let mut out = xv.clone();
        let mut x_hat = Vec::with_capacity(xv.len());
        let mut inv_sigma = Vec::with_capacity(xv.len() / h);
        for row in out.data_mut().chunks_mut(h) {
            let mu = row.iter().copied().sum::<T>() / hf;
            let var = row.iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>() / hf;
            let inv = T::one() / (var + eps).sqrt();
            inv_sigma.push(inv);
            for (j, v) in row.iter_mut().enumerate() {
                let xh = (*v - mu) * inv;
                x_hat.push(xh);
                *v = gv.data()[j] * xh + bv.data()[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_sigma,
            },
        ))
    }

    pub fn mean_axis1(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let &[b, t, d] = av.shape() else {
            return shape_err(format!("mean over axis 1 of {:?}", av.shape()));
        };
        let tf = T::lit(t as f64);
        let mut out = vec![T::zero(); b * d];
        for i in 0..b {
            for s in 0..t {
                let row = &av.data()[(i * t + s) * d..(i * t + s + 1) * d];
                for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                    *o = *o + *v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v / tf);
        let value = Tensor::new(vec![b, d], out)?;
        Ok(self.push(value, Op::MeanAxis1(a)))
    }

    /// Concatenates `[B, k_i]` tensors into `[B, Σ k_i]`.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return shape_err("concat of nothing".into());
        };
        let rows = self.value(*first).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != 2 || s[0] != rows {
                return shape_err(format!("concat part {s:?} with {rows} rows"));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(value, Op::ConcatLast(parts.to_vec())))
    }

    /// `Σ_i w_i · mean_b (pred[b, i] − target[b, i])²` as a scalar node.
    pub fn weighted_mse(&mut self, pred: Var, target: Tensor<T>, weights: Vec<T>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() || pv.shape().len() != 2 || pv.shape()[1] != weights.len() {
            return shape_err(format!(
                "weighted mse pred {:?} target {:?} weights {}",
                pv.shape(),
                target.shape(),
                weights.len()
            ));
        }
        let losses = per_task_mse(pv, &target);
        let total = losses.iter().zip(&weights).map(|(l, w)| *l * *w).sum::<T>();
        Ok(self.push(Tensor::scalar(total), Op::WeightedMse { pred, target, weights }))
    }

    /// Adjoints of every node with respect to the scalar `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        if self.value(out).len() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.value(out).shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(self.value(out).shape(), T::one()));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, w) => {
                    let (av, wv) = (self.value(*a), self.value(*w));
                    let k = av.last_dim();
                    let m = wv.shape()[1];
                    let n = av.len() / k;
                    gemm_bt_acc(g.data(), wv.data(), slot(&mut grads, &self.nodes, *a).data_mut(), n, m, k);
                    gemm_at_acc(av.data(), g.data(), slot(&mut grads, &self.nodes, *w).data_mut(), n, k, m);
                }
                Op::BatchMatMul(a, b) => {
                    let (bsz, n, k, m) = self.batch_dims(*a, *b, false)?;
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga = slot(&mut grads, &self.nodes, *a).data_mut();
                    for i in 0..bsz {
                        gemm_bt_acc(&g.data()[i * n * m..(i + 1) * n * m], &bv[i * k * m..(i + 1) * k * m], &mut ga[i * n * k..(i + 1) * n * k], n, m, k);
                    }
                    let gb = slot(&mut grads, &self.nodes, *b).data_mut();
                    for i in 0..bsz {
                        gemm_at_acc(&av[i * n * k..(i + 1) * n * k], &g.data()[i * n * m..(i + 1) * n * m], &mut gb[i * k * m..(i + 1) * k * m], n, k, m);
                    }
                }
                Op::BatchMatMulBt(a, b) => {
                    let (bsz, n, k, m) = self.batch_dims(*a, *b, true)?;
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga = slot(&mut grads, &self.nodes, *a).data_mut();
                    for i in 0..bsz {
                        gemm_acc(&g.data()[i * n * m..(i + 1) * n * m], &bv[i * m * k..(i + 1) * m * k], &mut ga[i * n * k..(i + 1) * n * k], n, m, k);
                    }
                    let gb = slot(&mut grads, &self.nodes, *b).data_mut();
                    for i in 0..bsz {
                        gemm_at_acc(&g.data()[i * n * m..(i + 1) * n * m], &av[i * n * k..(i + 1) * n * k], &mut gb[i * m * k..(i + 1) * m * k], n, m, k);
                    }
                }
                Op::Add(a, b) => {
                    slot(&mut grads, &self.nodes, *a).add_assign(&g);
                    slot(&mut grads, &self.nodes, *b).add_assign(&g);
                }
                Op::AddBroadcast(a, b) => {
                    slot(&mut grads, &self.nodes, *a).add_assign(&g);
                    let gb = slot(&mut grads, &self.nodes, *b);
                    let inner = gb.len();
                    for chunk in g.data().chunks(inner) {
                        for (x, y) in gb.data_mut().iter_mut().zip(chunk) {
                            *x = *x + *y;
                        }
                    }
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for ((o, x), gv) in ga.data_mut().iter_mut().zip(av.data()).zip(g.data()) {
                        if *x > T::zero() {
                            *o = *o + *gv;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for (o, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o = *o + *gv * *c;
                    }
                }
                Op::SoftmaxLast(a) => {
                    let y = &node.value;
                    let m = y.last_dim();
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for ((orow, yrow), grow) in ga.data_mut().chunks_mut(m).zip(y.data().chunks(m)).zip(g.data().chunks(m)) {
                        let dot = yrow.iter().zip(grow).map(|(a, b)| *a * *b).sum::<T>();
                        for ((o, yv), gv) in orow.iter_mut().zip(yrow).zip(grow) {
                            *o = *o + *yv * (*gv - dot);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_sigma,
                } => {
                    let gam = self.value(*gamma).data().to_vec();
                    let h = gam.len();
                    let hf = T::lit(h as f64);
                    {
                        let gg = slot(&mut grads, &self.nodes, *gamma).data_mut();
                        for (grow, xrow) in g.data().chunks(h).zip(x_hat.chunks(h)) {
                            for j in 0..h {
                                gg[j] = gg[j] + grow[j] * xrow[j];
                            }
                        }
                    }
                    {
                        let gbeta = slot(&mut grads, &self.nodes, *beta).data_mut();
                        for grow in g.data().chunks(h) {
                            for j in 0..h {
                                gbeta[j] = gbeta[j] + grow[j];
                            }
                        }
                    }
                    let gx = slot(&mut grads, &self.nodes, *x).data_mut();
                    for (r, ((grow, xrow), orow)) in g.data().chunks(h).zip(x_hat.chunks(h)).zip(gx.chunks_mut(h)).enumerate() {
                        let dxh: Vec<T> = grow.iter().zip(&gam).map(|(a, b)| *a * *b).collect();
                        let mean_d = dxh.iter().copied().sum::<T>() / hf;
                        let mean_dx = dxh.iter().zip(xrow).map(|(a, b)| *a * *b).sum::<T>() / hf;
                        for j in 0..h {
                            orow[j] = orow[j] + inv_sigma[r] * (dxh[j] - mean_d - xrow[j] * mean_dx);
                        }
                    }
                }
                Op::MeanAxis1(a) => {
                    let s = self.value(*a).shape().to_vec();
                    let (b, t, d) = (s[0], s[1], s[2]);
                    let tf = T::lit(t as f64);
                    let ga = slot(&mut grads, &self.nodes, *a).data_mut();
                    for i in 0..b {
                        for st in 0..t {
                            for j in 0..d {
                                let o = &mut ga[(i * t + st) * d + j];
                                *o = *o + g.data()[i * d + j] / tf;
                            }
                        }
                    }
                }
                Op::ConcatLast(parts) => {
                    let rows = node.value.shape()[0];
                    let total = node.value.shape()[1];
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).shape()[1];
                        let gp = slot(&mut grads, &self.nodes, *p).data_mut();
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] = gp[r * w + j] + g.data()[r * total + offset + j];
                            }
                        }
                        offset += w;
                    }
                }
                Op::WeightedMse { pred, target, weights } => {
                    let pv = self.value(*pred);
                    let (b, m) = (pv.shape()[0], pv.shape()[1]);
                    let seed = g.data()[0];
                    let two_over_b = T::lit(2.0) / T::lit(b as f64);
                    let gp = slot(&mut grads, &self.nodes, *pred).data_mut();
                    for r in 0..b {
                        for i in 0..m {
                            let k = r * m + i;
                            gp[k] = gp[k] + seed * weights[i] * two_over_b * (pv.data()[k] - target.data()[k]);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], nodes: &[Node<T>], v: Var) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()))
}

/// Per-column mean squared error of `[B, m]` predictions.
pub fn per_task_mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Vec<T> {
    let m = pred.last_dim();
    let b = pred.len() / m;
    let mut out = vec![T::zero(); m];
    for (p, y) in pred.data().chunks(m).zip(target.data().chunks(m)) {
        for i in 0..m {
            let d = p[i] - y[i];
            out[i] = out[i] + d * d;
        }
    }
    let bf = T::lit(b.max(1) as f64);
    out.into_iter().map(|v| v / bf).collect()
}

pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of `v`; `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn get_or_zeros(&self, v: Var, graph: &Graph<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }
}
