//! Unified sensor encoder: placement embedding, Conv-FFN stack, patching,
//! positional encoding, and trailing self-attention.
//!
//! Pipeline order: placement -> Conv-FFN -> patchify -> linear projection ->
//! PE -> self-attention. The Conv-FFN operates on the raw merged [D*C, L]
//! signal, so it must run before patching; placement fusion runs first so
//! device identity can condition the cross-channel mixing.

use crate::attention::{encoder_layer, linear, LayerWeights};
use crate::graph::{Graph, GraphError, NodeId, FFN_ACTIVATION};
use crate::model::{DataDims, ModelConfig, ModelError};
use crate::params::BoundParams;
use crate::pe::pe_table;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Imu,
    Wifi,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Imu => "imu",
            Modality::Wifi => "wifi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "imu" => Some(Modality::Imu),
            "wifi" => Some(Modality::Wifi),
            _ => None,
        }
    }
}

/// One clip of sensor data: D devices (or Tx-Rx links), C channels
/// (or subcarriers), L timesteps, stored row-major [D, C, L].
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSequence {
    pub modality: Modality,
    pub devices: usize,
    pub channels: usize,
    pub len: usize,
    pub sample_rate_hz: f64,
    /// Placement (or link) id per device; indexes the embedding table.
    pub placement_ids: Vec<usize>,
    pub values: Vec<f32>,
}

impl SensorSequence {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.devices == 0 || self.channels == 0 || self.len == 0 {
            return Err(ModelError::BadInput(format!(
                "degenerate sensor shape [{}, {}, {}]",
                self.devices, self.channels, self.len
            )));
        }
        if self.placement_ids.len() != self.devices {
            return Err(ModelError::BadInput(format!(
                "{} placement ids for {} devices",
                self.placement_ids.len(),
                self.devices
            )));
        }
        let want = self.devices * self.channels * self.len;
        if self.values.len() != want {
            return Err(ModelError::BadInput(format!(
                "signal has {} values, shape implies {want}",
                self.values.len()
            )));
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(ModelError::BadInput("signal contains NaN/Inf".into()));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(ModelError::BadInput(format!(
                "sample rate {} must be positive",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }

    /// Merged device/channel view [D*C, L]; row d*C + c is channel c of
    /// device d, which the [D,C,L] row-major layout already provides.
    pub fn as_matrix<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(vec![self.devices * self.channels, self.len], |i| {
            T::from_f64(self.values[i] as f64)
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.len as f64 / self.sample_rate_hz
    }
}

/// Additive placement fusion: channel c of every device with placement id r
/// receives table row r's component c, broadcast over time.
pub fn apply_placement<T: Scalar>(
    g: &mut Graph<T>,
    table: NodeId,
    x: NodeId,
    placement_ids: &[usize],
    channels: usize,
) -> Result<NodeId, GraphError> {
    let tshape = g.value(table).shape().to_vec();
    if tshape.len() != 2 || tshape[1] != channels {
        return Err(GraphError::Invalid {
            op: "apply_placement",
            msg: format!(
                "placement table {tshape:?} must be [num_placements, {channels}]"
            ),
        });
    }
    let rows = g.gather_rows(table, placement_ids)?; // [D, C]
    let col = g.reshape(rows, vec![placement_ids.len() * channels, 1])?;
    g.add(x, col)
}

/// DWConv -> act -> PWConv(groups=D) -> act -> the grouped stage output.
/// Device blocks are independent up to this point (groups isolate them).
pub(crate) fn conv_ffn_grouped_stage<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    prefix: &str,
    x: NodeId,
    dims: &DataDims,
) -> Result<NodeId, ModelError> {
    let m = dims.devices * dims.channels;
    let dw_w = p.id(&format!("{prefix}.dw.w"))?;
    let dw_b = p.id(&format!("{prefix}.dw.b"))?;
    let h = g.conv1d(x, dw_w, Some(dw_b), m)?;
    let h = g.activation(FFN_ACTIVATION, h);
    let pw_w = p.id(&format!("{prefix}.pw_dev.w"))?;
    let pw_b = p.id(&format!("{prefix}.pw_dev.b"))?;
    let h = g.conv1d(h, pw_w, Some(pw_b), dims.devices)?;
    Ok(g.activation(FFN_ACTIVATION, h))
}

/// One Conv-FFN block on the merged [D*C, L] signal:
/// grouped stage, then `n_final_pwconv` ungrouped PWConvs (activation
/// between consecutive ones, none after the last), then the residual add.
pub fn conv_ffn_block<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    prefix: &str,
    x: NodeId,
    dims: &DataDims,
    n_final_pwconv: usize,
) -> Result<NodeId, ModelError> {
    let m = dims.devices * dims.channels;
    let got = g.value(x).shape().to_vec();
    if got.len() != 2 || got[0] != m {
        return Err(ModelError::BadInput(format!(
            "conv_ffn_block expects [{m}, L] input, got {got:?}"
        )));
    }
    let mut h = conv_ffn_grouped_stage(g, p, prefix, x, dims)?;
    for j in 0..n_final_pwconv {
        if j > 0 {
            h = g.activation(FFN_ACTIVATION, h);
        }
        let w = p.id(&format!("{prefix}.pw_full.{j}.w"))?;
        let b = p.id(&format!("{prefix}.pw_full.{j}.b"))?;
        h = g.conv1d(h, w, Some(b), 1)?;
    }
    Ok(g.add(x, h)?)
}

/// Full sensor encoding to features [L1, d_model]. Ablation flags select
/// the enabled stages; with patching disabled, tokens are per-timestep
/// projections and L1 = L.
pub fn sensor_encode<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    dims: &DataDims,
    seq: &SensorSequence,
) -> Result<NodeId, ModelError> {
    seq.validate()?;
    if seq.modality != dims.modality
        || seq.devices != dims.devices
        || seq.channels != dims.channels
    {
        return Err(ModelError::BadInput(format!(
            "sequence is {}[D={},C={}], model expects {}[D={},C={}]",
            seq.modality.as_str(),
            seq.devices,
            seq.channels,
            dims.modality.as_str(),
            dims.devices,
            dims.channels
        )));
    }
    for &id in &seq.placement_ids {
        if id >= dims.num_placements {
            return Err(ModelError::BadInput(format!(
                "placement id {id} out of range {}",
                dims.num_placements
            )));
        }
    }

    let mut x = g.constant(seq.as_matrix::<T>()); // [M, L]
    if cfg.ablation.placement {
        let table = p.id("placement.table")?;
        x = apply_placement(g, table, x, &seq.placement_ids, dims.channels)?;
    }
    if cfg.ablation.convffn {
        for b in 0..cfg.n_convffn_blocks {
            x = conv_ffn_block(g, p, &format!("convffn.{b}"), x, dims, cfg.n_final_pwconv)?;
        }
    }
    let mut tok = if cfg.ablation.patch {
        let patches = g.patchify(x, cfg.patch.patch_len, cfg.patch.stride)?;
        let w = p.id("proj.w")?;
        let b = p.id("proj.b")?;
        linear(g, patches, w, b)?
    } else {
        let xt = g.transpose2(x)?; // [L, M]
        let w = p.id("proj.w")?;
        let b = p.id("proj.b")?;
        linear(g, xt, w, b)?
    };
    if cfg.ablation.pe {
        let l1 = g.value(tok).shape()[0];
        let pe = pe_table::<T>(cfg.d_model, cfg.pe_base_sensor, l1)?;
        let pe_id = g.constant(pe);
        tok = g.add(tok, pe_id)?;
    }
    let mut out = tok;
    for l in 0..cfg.n_sa_layers {
        let lw = LayerWeights::lookup(p, &format!("sa.{l}"))?;
        out = encoder_layer(g, &lw, cfg.n_heads, out, false)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_placement_table_is_identity() {
        let mut g = Graph::<f64>::new();
        let table = g.leaf(Tensor::zeros(vec![4, 3]), true);
        let x = g.leaf(Tensor::from_fn(vec![6, 5], |i| i as f64), false);
        let y = apply_placement(&mut g, table, x, &[2, 0], 3).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn shared_placement_id_offsets_both_devices_identically() {
        let mut g = Graph::<f64>::new();
        let table = g.leaf(
            Tensor::from_fn(vec![4, 2], |i| (10 * i) as f64),
            false,
        );
        let x = g.leaf(Tensor::zeros(vec![4, 3]), false);
        let y = apply_placement(&mut g, table, x, &[3, 3], 2).unwrap();
        let d = g.value(y).data();
        // both devices get row 3 = [60, 70], each channel constant over time
        assert_eq!(&d[0..3], &[60.0; 3]);
        assert_eq!(&d[3..6], &[70.0; 3]);
        assert_eq!(&d[6..9], &[60.0; 3]);
        assert_eq!(&d[9..12], &[70.0; 3]);
    }

    #[test]
    fn placement_gradient_sums_over_time_and_devices() {
        // 2 devices sharing placement id 1, C=2, L=3; loss = sum(output).
        // d loss / d row1 channel c = number of (device, time) cells = 2*3.
        let mut g = Graph::<f64>::new();
        let table = g.leaf(Tensor::zeros(vec![2, 2]), true);
        let x = g.leaf(Tensor::from_fn(vec![4, 3], |i| i as f64), false);
        let y = apply_placement(&mut g, table, x, &[1, 1], 2).unwrap();
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(table).unwrap(), &[0.0, 0.0, 6.0, 6.0]);
    }
}
