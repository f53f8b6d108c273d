//! Value-level entry points to the building blocks, for callers that do not
//! need gradients.

use super::graph::Graph;
use super::teb::{attention_node, mlp_node, MlpWeights};
use super::tensor::Tensor;
use crate::{Result, Scalar};

/// `ReLU(x W1 + b1) W2 + b2`, applied to the last axis of `x`.
pub fn mlp_forward<T: Scalar>(x: &Tensor<T>, w: &MlpWeights<Tensor<T>>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.leaf(x.clone());
    let vars = MlpWeights {
        w1: g.leaf(w.w1.clone()),
        b1: g.leaf(w.b1.clone()),
        w2: g.leaf(w.w2.clone()),
        b2: g.leaf(w.b2.clone()),
    };
    let y = mlp_node(&mut g, x, &vars)?;
    Ok(g.value(y).clone())
}

/// Row-wise layer normalisation over the last axis.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (x, gm, bt) = (g.leaf(x.clone()), g.leaf(gamma.clone()), g.leaf(beta.clone()));
    let y = g.layer_norm(x, gm, bt, eps)?;
    Ok(g.value(y).clone())
}

/// Single-head self-attention over a `[T, d]` sequence or a `[B, T, d]` batch.
pub fn self_attention<T: Scalar>(x: &Tensor<T>, wq: &Tensor<T>, wk: &Tensor<T>, wv: &Tensor<T>) -> Result<Tensor<T>> {
    let squeeze = x.shape().len() == 2;
    let input = if squeeze {
        x.clone().reshape(&[1, x.shape()[0], x.shape()[1]])?
    } else {
        x.clone()
    };
    let mut g = Graph::new();
    let xv = g.leaf(input);
    let (q, k, v) = (g.leaf(wq.clone()), g.leaf(wk.clone()), g.leaf(wv.clone()));
    let z = attention_node(&mut g, xv, q, k, v)?;
    let out = g.value(z).clone();
    if squeeze {
        let s = out.shape().to_vec();
        out.reshape(&s[1..])
    } else {
        Ok(out)
    }
}
