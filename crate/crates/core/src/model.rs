//! Model configuration and the captioning model shell: parameter
//! construction, forward composition, and the sensor-evaluation counter
//! backing the compute-once decoding contract.

use std::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha8Rng;

use crate::encoder::{sensor_encode, Modality, SensorSequence};
use crate::generator::{cross_attend, project_logits};
use crate::graph::{Graph, GraphError, NodeId};
use crate::params::{init_tensor, BoundParams, Init, ParamError, ParamStore};
use crate::pe::PeError;
use crate::scalar::Scalar;
use crate::text::{text_encode, TextError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Pe(#[from] PeError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: usize,
}

/// Stage toggles; `true` means the stage is enabled (the full model).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    pub patch: bool,
    pub pe: bool,
    pub placement: bool,
    pub convffn: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            patch: true,
            pe: true,
            placement: true,
            convffn: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_sa_layers: usize,
    pub n_text_layers: usize,
    pub n_convffn_blocks: usize,
    pub dw_kernel: usize,
    pub patch: PatchConfig,
    pub pe_base_sensor: f64,
    pub pe_base_text: f64,
    /// Trailing ungrouped PWConv count: 1 for IMU, 2 for Wi-Fi.
    pub n_final_pwconv: usize,
    pub ffn_width: usize,
    pub t_max: usize,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_sa_layers: 2,
            n_text_layers: 2,
            n_convffn_blocks: 2,
            dw_kernel: 15,
            patch: PatchConfig {
                patch_len: 25,
                stride: 25,
            },
            pe_base_sensor: 1000.0,
            pe_base_text: 10000.0,
            n_final_pwconv: 1,
            ffn_width: 256,
            t_max: 50,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    /// Room for <SOS> and <EOS> around the longest caption.
    pub fn max_text_len(&self) -> usize {
        self.t_max + 2
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return bad(format!("d_model {} must be even and positive", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "n_heads {} must divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if self.n_sa_layers == 0 || self.n_text_layers == 0 {
            return bad("layer counts must be >= 1".into());
        }
        if self.n_convffn_blocks == 0 {
            return bad("n_convffn_blocks must be >= 1".into());
        }
        if self.dw_kernel == 0 || self.dw_kernel % 2 == 0 {
            return bad(format!("dw_kernel {} must be odd", self.dw_kernel));
        }
        if self.patch.patch_len == 0 || self.patch.stride == 0 {
            return bad("patch length and stride must be >= 1".into());
        }
        if self.pe_base_sensor <= 0.0 || self.pe_base_text <= 0.0 {
            return bad("positional encoding bases must be positive".into());
        }
        if self.n_final_pwconv == 0 {
            return bad("n_final_pwconv must be >= 1".into());
        }
        if self.ffn_width == 0 {
            return bad("ffn_width must be >= 1".into());
        }
        if self.t_max == 0 {
            return bad("t_max must be >= 1".into());
        }
        Ok(())
    }
}

/// Shape of the sensor data a model instance is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataDims {
    pub modality: Modality,
    pub devices: usize,
    pub channels: usize,
    /// Placement embedding table rows (device placements or Tx-Rx links).
    pub num_placements: usize,
}

impl DataDims {
    pub fn imu_default() -> Self {
        Self {
            modality: Modality::Imu,
            devices: 6,
            channels: 6,
            num_placements: 6,
        }
    }

    pub fn wifi_default() -> Self {
        Self {
            modality: Modality::Wifi,
            devices: 3,
            channels: 30,
            num_placements: 3,
        }
    }

    pub fn merged_channels(&self) -> usize {
        self.devices * self.channels
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.devices == 0 || self.channels == 0 || self.num_placements == 0 {
            return Err(ModelError::BadConfig(format!(
                "degenerate data dims: D={} C={} placements={}",
                self.devices, self.channels, self.num_placements
            )));
        }
        Ok(())
    }
}

/// The full captioning model: named parameters plus the configuration they
/// were built for. Forward passes are pure functions of (params, input);
/// this struct only adds construction and the decode-contract counter.
pub struct CaptionModel<T: Scalar> {
    pub cfg: ModelConfig,
    pub dims: DataDims,
    pub vocab_total: u32,
    pub params: ParamStore<T>,
    sensor_evals: AtomicU64,
}

impl<T: Scalar> CaptionModel<T> {
    pub fn new(
        cfg: ModelConfig,
        dims: DataDims,
        vocab_total: u32,
        seed: u64,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        dims.validate()?;
        if vocab_total < crate::text::NUM_SPECIALS {
            return Err(ModelError::BadConfig(format!(
                "vocab_total {vocab_total} smaller than the {} specials",
                crate::text::NUM_SPECIALS
            )));
        }
        let params = build_params::<T>(&cfg, &dims, vocab_total, seed)?;
        Ok(Self {
            cfg,
            dims,
            vocab_total,
            params,
            sensor_evals: AtomicU64::new(0),
        })
    }

    /// Rewraps existing parameters (checkpoint load).
    pub fn from_parts(
        cfg: ModelConfig,
        dims: DataDims,
        vocab_total: u32,
        params: ParamStore<T>,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        dims.validate()?;
        Ok(Self {
            cfg,
            dims,
            vocab_total,
            params,
            sensor_evals: AtomicU64::new(0),
        })
    }

    pub fn sensor_evals(&self) -> u64 {
        self.sensor_evals.load(Ordering::Relaxed)
    }

    pub fn reset_sensor_evals(&self) {
        self.sensor_evals.store(0, Ordering::Relaxed);
    }

    /// Sensor features [L1, d_model]; counts one evaluation.
    pub fn encode_sensor(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        seq: &SensorSequence,
    ) -> Result<NodeId, ModelError> {
        self.sensor_evals.fetch_add(1, Ordering::Relaxed);
        sensor_encode(g, p, &self.cfg, &self.dims, seq)
    }

    pub fn encode_text(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        ids: &[u32],
    ) -> Result<NodeId, ModelError> {
        text_encode(g, p, &self.cfg, ids)
    }

    /// Next-token logits [L2, vocab_total] over precomputed sensor features.
    pub fn caption_logits_from_features(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: NodeId,
        input_ids: &[u32],
    ) -> Result<NodeId, ModelError> {
        let t = text_encode(g, p, &self.cfg, input_ids)?;
        let z = cross_attend(g, p, self.cfg.n_heads, t, x)?;
        project_logits(g, p, z)
    }

    /// End-to-end logits for one (sensor, text-prefix) pair.
    pub fn caption_logits(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        seq: &SensorSequence,
        input_ids: &[u32],
    ) -> Result<NodeId, ModelError> {
        let x = self.encode_sensor(g, p, seq)?;
        self.caption_logits_from_features(g, p, x, input_ids)
    }
}

fn build_params<T: Scalar>(
    cfg: &ModelConfig,
    dims: &DataDims,
    vocab_total: u32,
    seed: u64,
) -> Result<ParamStore<T>, ModelError> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    let d = cfg.d_model;
    let m = dims.merged_channels();
    let vocab = vocab_total as usize;

    let xavier =
        |ps: &mut ParamStore<T>, name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng|
         -> Result<(), ModelError> {
            ps.insert(name, init_tensor(shape, Init::XavierUniform { fan_in, fan_out }, rng))?;
            Ok(())
        };
    let zeros = |ps: &mut ParamStore<T>, name: String, shape: Vec<usize>| -> Result<(), ModelError> {
        ps.insert(name, init_tensor(shape, Init::Zeros, &mut ChaCha8Rng::seed_from_u64(0)))?;
        Ok(())
    };
    let ones = |ps: &mut ParamStore<T>, name: String, shape: Vec<usize>| -> Result<(), ModelError> {
        ps.insert(name, init_tensor(shape, Init::Ones, &mut ChaCha8Rng::seed_from_u64(0)))?;
        Ok(())
    };

    if cfg.ablation.placement {
        ps.insert(
            "placement.table",
            init_tensor(
                vec![dims.num_placements, dims.channels],
                Init::Normal { std: 0.02 },
                &mut rng,
            ),
        )?;
    }

    if cfg.ablation.convffn {
        let k = cfg.dw_kernel;
        for b in 0..cfg.n_convffn_blocks {
            xavier(&mut ps, format!("convffn.{b}.dw.w"), vec![m, 1, k], k, k, &mut rng)?;
            zeros(&mut ps, format!("convffn.{b}.dw.b"), vec![m])?;
            xavier(
                &mut ps,
                format!("convffn.{b}.pw_dev.w"),
                vec![m, dims.channels, 1],
                dims.channels,
                dims.channels,
                &mut rng,
            )?;
            zeros(&mut ps, format!("convffn.{b}.pw_dev.b"), vec![m])?;
            for j in 0..cfg.n_final_pwconv {
                xavier(
                    &mut ps,
                    format!("convffn.{b}.pw_full.{j}.w"),
                    vec![m, m, 1],
                    m,
                    m,
                    &mut rng,
                )?;
                zeros(&mut ps, format!("convffn.{b}.pw_full.{j}.b"), vec![m])?;
            }
        }
    }

    let proj_in = if cfg.ablation.patch {
        m * cfg.patch.patch_len
    } else {
        m
    };
    xavier(&mut ps, "proj.w".into(), vec![proj_in, d], proj_in, d, &mut rng)?;
    zeros(&mut ps, "proj.b".into(), vec![d])?;

    let layer = |ps: &mut ParamStore<T>, prefix: String, rng: &mut ChaCha8Rng| -> Result<(), ModelError> {
        for nm in ["wq", "wk", "wv", "wo"] {
            xavier(ps, format!("{prefix}.attn.{nm}"), vec![d, d], d, d, rng)?;
        }
        ones(ps, format!("{prefix}.ln1.g"), vec![d])?;
        zeros(ps, format!("{prefix}.ln1.b"), vec![d])?;
        xavier(ps, format!("{prefix}.ffn.w1"), vec![d, cfg.ffn_width], d, cfg.ffn_width, rng)?;
        zeros(ps, format!("{prefix}.ffn.b1"), vec![cfg.ffn_width])?;
        xavier(ps, format!("{prefix}.ffn.w2"), vec![cfg.ffn_width, d], cfg.ffn_width, d, rng)?;
        zeros(ps, format!("{prefix}.ffn.b2"), vec![d])?;
        ones(ps, format!("{prefix}.ln2.g"), vec![d])?;
        zeros(ps, format!("{prefix}.ln2.b"), vec![d])?;
        Ok(())
    };

    for l in 0..cfg.n_sa_layers {
        layer(&mut ps, format!("sa.{l}"), &mut rng)?;
    }

    ps.insert(
        "text.embed",
        init_tensor(vec![vocab, d], Init::Normal { std: 0.02 }, &mut rng),
    )?;
    for l in 0..cfg.n_text_layers {
        layer(&mut ps, format!("text.{l}"), &mut rng)?;
    }

    for nm in ["wq", "wk", "wv", "wo"] {
        xavier(&mut ps, format!("xattn.{nm}"), vec![d, d], d, d, &mut rng)?;
    }
    ones(&mut ps, "xattn.ln.g".into(), vec![d])?;
    zeros(&mut ps, "xattn.ln.b".into(), vec![d])?;

    xavier(&mut ps, "mlp.w1".into(), vec![d, d], d, d, &mut rng)?;
    zeros(&mut ps, "mlp.b1".into(), vec![d])?;
    xavier(&mut ps, "mlp.w2".into(), vec![d, vocab], d, vocab, &mut rng)?;
    zeros(&mut ps, "mlp.b2".into(), vec![vocab])?;

    Ok(ps)
}
