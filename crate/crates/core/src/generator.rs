//! Cross-attention fusion of text and sensor features, vocabulary logits,
//! and greedy autoregressive decoding.

use crate::attention::{attend, layer_norm_affine, linear, AttnWeights};
use crate::graph::{Graph, NodeId, FFN_ACTIVATION};
use crate::model::{CaptionModel, ModelError};
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::text::{detokenize, text_encode, Vocabulary, EOS_ID, SOS_ID};

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    /// Maximum number of generated content tokens.
    pub t_max: usize,
    pub start_id: u32,
    pub stop_id: u32,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            t_max: 50,
            start_id: SOS_ID,
            stop_id: EOS_ID,
        }
    }
}

impl DecodeConfig {
    pub fn with_t_max(t_max: usize) -> Self {
        Self {
            t_max,
            ..Self::default()
        }
    }
}

/// Fuses text features (queries) with sensor features (keys/values):
/// multi-head scaled dot-product attention, output projection, residual
/// onto the text side, then affine layer normalization. [L2, d] -> [L2, d].
pub fn cross_attend<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    n_heads: usize,
    t: NodeId,
    x: NodeId,
) -> Result<NodeId, ModelError> {
    let dt = g.value(t).shape().to_vec();
    let dx = g.value(x).shape().to_vec();
    if dt.len() != 2 || dx.len() != 2 || dt[1] != dx[1] {
        return Err(ModelError::BadInput(format!(
            "cross_attend needs matching d_model, got {dt:?} and {dx:?}"
        )));
    }
    let w = AttnWeights::lookup(p, "xattn")?;
    let fused = attend(g, &w, n_heads, t, x, false)?;
    let res = g.add(t, fused)?;
    let gamma = p.id("xattn.ln.g")?;
    let beta = p.id("xattn.ln.b")?;
    Ok(layer_norm_affine(g, res, gamma, beta)?)
}

/// Two-layer MLP d_model -> d_model -> vocab_total. Raw logits; the loss
/// applies log-softmax downstream.
pub fn project_logits<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    z: NodeId,
) -> Result<NodeId, ModelError> {
    let w1 = p.id("mlp.w1")?;
    let b1 = p.id("mlp.b1")?;
    let w2 = p.id("mlp.w2")?;
    let b2 = p.id("mlp.b2")?;
    let h = linear(g, z, w1, b1)?;
    let ha = g.activation(FFN_ACTIVATION, h);
    Ok(linear(g, ha, w2, b2)?)
}

/// Lowest index among the maxima (deterministic tie rule).
pub fn argmax_lowest<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    /// Generated content token ids (no specials).
    pub token_ids: Vec<u32>,
    pub caption: String,
}

/// Greedy autoregressive decoding: starting from <SOS>, repeatedly encode
/// the prefix, fuse with the sensor features (computed exactly once), take
/// the last position's logits and append the argmax token. Stops at the
/// stop id or after t_max content tokens.
pub fn greedy_decode<T: Scalar>(
    model: &CaptionModel<T>,
    seq: &crate::encoder::SensorSequence,
    vocab: &Vocabulary,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput, ModelError> {
    if cfg.t_max == 0 {
        return Err(ModelError::BadInput("t_max must be >= 1".into()));
    }
    // Sensor features once, then reused as a constant in each step's graph.
    let x_val = {
        let mut g = Graph::<T>::new();
        let bound = model.params.bind_frozen(&mut g);
        let x = model.encode_sensor(&mut g, &bound, seq)?;
        g.value(x).clone()
    };

    let mut prefix: Vec<u32> = vec![cfg.start_id];
    let mut content: Vec<u32> = Vec::new();
    loop {
        let mut g = Graph::<T>::new();
        let bound = model.params.bind_frozen(&mut g);
        let x = g.constant(x_val.clone());
        let t = text_encode(&mut g, &bound, &model.cfg, &prefix)?;
        let z = cross_attend(&mut g, &bound, model.cfg.n_heads, t, x)?;
        let logits = project_logits(&mut g, &bound, z)?;
        let rows = g.value(logits).shape()[0];
        let last = g.slice_rows(logits, rows - 1, rows)?;
        let next = argmax_lowest(g.value(last).data()) as u32;
        if next == cfg.stop_id {
            break;
        }
        content.push(next);
        if content.len() >= cfg.t_max {
            break;
        }
        prefix.push(next);
    }
    let caption = detokenize(&content, vocab)?;
    Ok(DecodeOutput {
        token_ids: content,
        caption,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_toward_lowest_id() {
        assert_eq!(argmax_lowest(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[5.0f64]), 0);
        assert_eq!(argmax_lowest(&[2.0f32, 2.0, 2.0]), 0);
    }
}
