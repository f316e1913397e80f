//! Multi-head attention and the shared Transformer encoder layer.
//!
//! Projection matrices are stored packed as [d_model, d_model]; the per-head
//! [d_model, d_k] matrices are their column blocks, sliced after projection.
//! With n_heads = 1 the packed form is the single-head formulation verbatim.

use crate::graph::{Graph, GraphError, NodeId, FFN_ACTIVATION};
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) const LN_EPS: f64 = 1e-5;
/// Additive pre-softmax mask value for disallowed attention positions.
const MASK_NEG: f64 = -1e9;

pub(crate) struct AttnWeights {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

impl AttnWeights {
    pub fn lookup(p: &BoundParams, prefix: &str) -> Result<Self, GraphError> {
        Ok(Self {
            wq: p.id(&format!("{prefix}.wq"))?,
            wk: p.id(&format!("{prefix}.wk"))?,
            wv: p.id(&format!("{prefix}.wv"))?,
            wo: p.id(&format!("{prefix}.wo"))?,
        })
    }
}

/// y = x.w + b with b broadcast over rows.
pub(crate) fn linear<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, GraphError> {
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

/// Affine layer normalization over rows: LN(x)*gamma + beta.
pub(crate) fn layer_norm_affine<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
) -> Result<NodeId, GraphError> {
    let n = g.layer_norm_rows(x, LN_EPS)?;
    let scaled = g.mul(n, gamma)?;
    g.add(scaled, beta)
}

fn causal_mask<T: Scalar>(g: &mut Graph<T>, n: usize) -> NodeId {
    let t = Tensor::from_fn(vec![n, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        if j <= i {
            T::zero()
        } else {
            T::from_f64(MASK_NEG)
        }
    });
    g.constant(t)
}

/// Scaled dot-product attention, multi-head.
/// q_src: [Lq, d]; kv_src: [Lk, d]; output [Lq, d] (after Wo projection).
/// `causal` masks position j > i; only valid when Lq == Lk.
pub(crate) fn attend<T: Scalar>(
    g: &mut Graph<T>,
    w: &AttnWeights,
    n_heads: usize,
    q_src: NodeId,
    kv_src: NodeId,
    causal: bool,
) -> Result<NodeId, GraphError> {
    let d = g.value(q_src).shape()[1];
    if d % n_heads != 0 {
        return Err(GraphError::Invalid {
            op: "attend",
            msg: format!("d_model {d} not divisible by n_heads {n_heads}"),
        });
    }
    let dh = d / n_heads;
    let q = g.matmul(q_src, w.wq)?;
    let k = g.matmul(kv_src, w.wk)?;
    let v = g.matmul(kv_src, w.wv)?;
    let mask = if causal {
        let lq = g.value(q).shape()[0];
        let lk = g.value(k).shape()[0];
        if lq != lk {
            return Err(GraphError::Invalid {
                op: "attend",
                msg: format!("causal mask needs square attention, got {lq}x{lk}"),
            });
        }
        Some(causal_mask(g, lq))
    } else {
        None
    };
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = g.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = g.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kt = g.transpose2(kh)?;
        let raw = g.matmul(qh, kt)?;
        let mut scores = g.scale(raw, scale);
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let attn = g.softmax_rows(scores)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let ctx = g.concat_cols(&heads)?;
    g.matmul(ctx, w.wo)
}

pub(crate) struct LayerWeights {
    pub attn: AttnWeights,
    pub ln1_g: NodeId,
    pub ln1_b: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
    pub ln2_g: NodeId,
    pub ln2_b: NodeId,
}

impl LayerWeights {
    pub fn lookup(p: &BoundParams, prefix: &str) -> Result<Self, GraphError> {
        Ok(Self {
            attn: AttnWeights::lookup(p, &format!("{prefix}.attn"))?,
            ln1_g: p.id(&format!("{prefix}.ln1.g"))?,
            ln1_b: p.id(&format!("{prefix}.ln1.b"))?,
            ffn_w1: p.id(&format!("{prefix}.ffn.w1"))?,
            ffn_b1: p.id(&format!("{prefix}.ffn.b1"))?,
            ffn_w2: p.id(&format!("{prefix}.ffn.w2"))?,
            ffn_b2: p.id(&format!("{prefix}.ffn.b2"))?,
            ln2_g: p.id(&format!("{prefix}.ln2.g"))?,
            ln2_b: p.id(&format!("{prefix}.ln2.b"))?,
        })
    }
}

/// Post-norm Transformer encoder layer:
/// x -> LN(x + MHSA(x)) -> LN(. + FFN(.)).
pub(crate) fn encoder_layer<T: Scalar>(
    g: &mut Graph<T>,
    lw: &LayerWeights,
    n_heads: usize,
    x: NodeId,
    causal: bool,
) -> Result<NodeId, GraphError> {
    let a = attend(g, &lw.attn, n_heads, x, x, causal)?;
    let r1 = g.add(x, a)?;
    let n1 = layer_norm_affine(g, r1, lw.ln1_g, lw.ln1_b)?;
    let h1 = linear(g, n1, lw.ffn_w1, lw.ffn_b1)?;
    let h1a = g.activation(FFN_ACTIVATION, h1);
    let h2 = linear(g, h1a, lw.ffn_w2, lw.ffn_b2)?;
    let r2 = g.add(n1, h2)?;
    layer_norm_affine(g, r2, lw.ln2_g, lw.ln2_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Tensor<f64> {
        Tensor::from_fn(vec![n, n], |idx| {
            if idx / n == idx % n {
                1.0
            } else {
                0.0
            }
        })
    }

    fn identity_weights(g: &mut Graph<f64>, d: usize) -> AttnWeights {
        AttnWeights {
            wq: g.leaf(eye(d), false),
            wk: g.leaf(eye(d), false),
            wv: g.leaf(eye(d), false),
            wo: g.leaf(eye(d), false),
        }
    }

    #[test]
    fn single_key_row_attention_broadcasts_the_value() {
        let mut g = Graph::<f64>::new();
        let d = 4;
        let w = identity_weights(&mut g, d);
        let t = g.leaf(Tensor::from_fn(vec![3, d], |i| (i as f64) * 0.1 - 0.5), false);
        let x = g.leaf(Tensor::new(vec![1, d], vec![0.3, -1.0, 2.0, 0.7]).unwrap(), false);
        let z = attend(&mut g, &w, 2, t, x, false).unwrap();
        // one key: softmax over a single logit is 1, so every query row gets
        // the single value row (identity Wv, Wo)
        for i in 0..3 {
            for j in 0..d {
                assert!((g.value(z).at2(i, j) - g.value(x).at2(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_key_rows_give_uniform_attention() {
        let mut g = Graph::<f64>::new();
        let d = 4;
        let w = identity_weights(&mut g, d);
        let t = g.leaf(Tensor::from_fn(vec![2, d], |i| i as f64 * 0.2), false);
        // x rows identical -> attention uniform -> output = column mean of V = the shared row
        let row = [1.0, 2.0, -3.0, 0.5];
        let x = g.leaf(
            Tensor::from_fn(vec![5, d], |idx| row[idx % d]),
            false,
        );
        let z = attend(&mut g, &w, 1, t, x, false).unwrap();
        for i in 0..2 {
            for j in 0..d {
                assert!((g.value(z).at2(i, j) - row[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_mask_zeroes_future_attention() {
        let mut g = Graph::<f64>::new();
        let d = 2;
        let w = identity_weights(&mut g, d);
        let x = g.leaf(Tensor::from_fn(vec![3, d], |i| (i % 5) as f64 - 1.0), false);
        // reconstruct the attention matrix by attending with V = identity basis
        // simpler: check row 0 equals V row 0 (can only see itself)
        let z = attend(&mut g, &w, 1, x, x, true).unwrap();
        for j in 0..d {
            assert!((g.value(z).at2(0, j) - g.value(x).at2(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_requires_square() {
        let mut g = Graph::<f64>::new();
        let w = identity_weights(&mut g, 2);
        let a = g.leaf(Tensor::zeros(vec![3, 2]), false);
        let b = g.leaf(Tensor::zeros(vec![4, 2]), false);
        assert!(attend(&mut g, &w, 1, a, b, true).is_err());
        assert!(attend(&mut g, &w, 1, a, b, false).is_ok());
    }
}
