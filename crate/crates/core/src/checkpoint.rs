//! On-disk model checkpoints.
//!
//! A checkpoint is a directory:
//!   meta.txt     key = value: format version, dtype, data dims, seed, step,
//!                optimizer hyperparameters (written last; commit marker)
//!   config.txt   run configuration, canonical textual form
//!   vocab.txt    content words in id order, one per line
//!   index.tsv    name <TAB> dtype <TAB> shape (dims joined by x) <TAB> offset
//!   tensors.bin  one little-endian payload holding every indexed tensor
//!
//! Parameters are indexed as `param.<name>`, optimizer moments as
//! `adam.m.<name>` and `adam.v.<name>`. Each file is written to a temp
//! path and renamed, so a crash never leaves a half-written file.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::adam::AdamState;
use crate::config::{ConfigError, RunConfig};
use crate::encoder::Modality;
use crate::model::{CaptionModel, DataDims, ModelError};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::text::Vocabulary;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unsupported checkpoint version {found} (this build reads {})", CHECKPOINT_VERSION)]
    VersionMismatch { found: String },
    #[error("checkpoint stores dtype {got}, expected {want}")]
    DtypeMismatch { want: &'static str, got: String },
    #[error("meta.txt: {0}")]
    Meta(String),
    #[error("index.tsv line {line}: {msg}")]
    Index { line: usize, msg: String },
    #[error("tensor {name:?} missing from the checkpoint index")]
    MissingTensor { name: String },
    #[error("tensor {name:?} not expected by this configuration")]
    UnexpectedTensor { name: String },
    #[error("tensor {name:?} has shape {got:?}, configuration requires {want:?}")]
    ShapeMismatch {
        name: String,
        want: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("payload truncated while reading tensor {name:?}")]
    Truncated { name: String },
}

/// Everything needed to resume or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub run: RunConfig,
    pub dims: DataDims,
    pub vocab: Vocabulary,
    /// Training-run base seed (shuffle and init streams derive from it).
    pub seed: u64,
    pub params: ParamStore<T>,
    pub opt: AdamState<T>,
}

impl<T: Scalar> Checkpoint<T> {
    /// Rebuilds the inference model over this checkpoint's parameters.
    pub fn model(&self) -> Result<CaptionModel<T>, ModelError> {
        CaptionModel::from_parts(
            self.run.model_config(self.dims.modality),
            self.dims,
            self.vocab.total(),
            self.params.clone(),
        )
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CheckpointError> {
    let tmp = dir.join(format!(".tmp.{name}"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(
    ckpt: &Checkpoint<T>,
    dir: &Path,
) -> Result<(), CheckpointError> {
    std::fs::create_dir_all(dir)?;

    let mut payload: Vec<u8> = Vec::new();
    let mut index = String::new();
    let put = |name: String, t: &Tensor<T>, payload: &mut Vec<u8>, index: &mut String| {
        let offset = payload.len();
        for &v in t.data() {
            T::write_le(v, payload);
        }
        let shape = t
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        index.push_str(&format!("{name}\t{}\t{shape}\t{offset}\n", T::DTYPE));
    };
    for (name, t) in ckpt.params.iter() {
        put(format!("param.{name}"), t, &mut payload, &mut index);
    }
    for (name, t) in &ckpt.opt.m {
        put(format!("adam.m.{name}"), t, &mut payload, &mut index);
    }
    for (name, t) in &ckpt.opt.v {
        put(format!("adam.v.{name}"), t, &mut payload, &mut index);
    }

    let mut run = ckpt.run.clone();
    run.n_final_pwconv = Some(
        run.model_config(ckpt.dims.modality).n_final_pwconv,
    );

    let vocab_txt = ckpt
        .vocab
        .content_words()
        .iter()
        .map(|w| format!("{w}\n"))
        .collect::<String>();

    let meta = format!(
        "version = {CHECKPOINT_VERSION}\n\
         dtype = {}\n\
         modality = {}\n\
         devices = {}\n\
         channels = {}\n\
         num_placements = {}\n\
         vocab_total = {}\n\
         seed = {}\n\
         step = {}\n\
         adam.lr = {:?}\n\
         adam.beta1 = {:?}\n\
         adam.beta2 = {:?}\n\
         adam.eps = {:?}\n\
         adam.weight_decay = {:?}\n",
        T::DTYPE,
        ckpt.dims.modality.as_str(),
        ckpt.dims.devices,
        ckpt.dims.channels,
        ckpt.dims.num_placements,
        ckpt.vocab.total(),
        ckpt.seed,
        ckpt.opt.step,
        ckpt.opt.lr,
        ckpt.opt.beta1,
        ckpt.opt.beta2,
        ckpt.opt.eps,
        ckpt.opt.weight_decay,
    );

    write_atomic(dir, "tensors.bin", &payload)?;
    write_atomic(dir, "index.tsv", index.as_bytes())?;
    write_atomic(dir, "config.txt", run.serialize().as_bytes())?;
    write_atomic(dir, "vocab.txt", vocab_txt.as_bytes())?;
    // meta last: its presence marks a complete checkpoint
    write_atomic(dir, "meta.txt", meta.as_bytes())?;
    Ok(())
}

struct IndexEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

fn parse_index(text: &str) -> Result<HashMap<String, IndexEntry>, CheckpointError> {
    let mut map = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = raw.split('\t').collect();
        if parts.len() != 4 {
            return Err(CheckpointError::Index {
                line,
                msg: format!("expected 4 tab-separated fields, got {}", parts.len()),
            });
        }
        let shape: Result<Vec<usize>, _> = parts[2].split('x').map(|d| d.parse()).collect();
        let shape = shape.map_err(|_| CheckpointError::Index {
            line,
            msg: format!("bad shape {:?}", parts[2]),
        })?;
        let offset: usize = parts[3].parse().map_err(|_| CheckpointError::Index {
            line,
            msg: format!("bad offset {:?}", parts[3]),
        })?;
        if map
            .insert(
                parts[0].to_string(),
                IndexEntry {
                    dtype: parts[1].to_string(),
                    shape,
                    offset,
                },
            )
            .is_some()
        {
            return Err(CheckpointError::Index {
                line,
                msg: format!("duplicate tensor {:?}", parts[0]),
            });
        }
    }
    Ok(map)
}

fn read_tensor<T: Scalar>(
    name: &str,
    entry: &IndexEntry,
    want_shape: &[usize],
    payload: &[u8],
) -> Result<Tensor<T>, CheckpointError> {
    if entry.dtype != T::DTYPE {
        return Err(CheckpointError::DtypeMismatch {
            want: T::DTYPE,
            got: entry.dtype.clone(),
        });
    }
    if entry.shape != want_shape {
        return Err(CheckpointError::ShapeMismatch {
            name: name.to_string(),
            want: want_shape.to_vec(),
            got: entry.shape.clone(),
        });
    }
    let numel: usize = entry.shape.iter().product();
    let bytes = numel * T::BYTES;
    let end = entry.offset.checked_add(bytes).filter(|&e| e <= payload.len());
    let end = end.ok_or_else(|| CheckpointError::Truncated {
        name: name.to_string(),
    })?;
    let data: Vec<T> = payload[entry.offset..end]
        .chunks_exact(T::BYTES)
        .map(T::read_le)
        .collect();
    Ok(Tensor::new(want_shape.to_vec(), data).expect("shape and data agree"))
}

fn meta_map(text: &str) -> Result<HashMap<String, String>, CheckpointError> {
    let mut map = HashMap::new();
    for raw in text.lines() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| CheckpointError::Meta(format!("bad line {raw:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn meta_get<'a>(
    map: &'a HashMap<String, String>,
    key: &str,
) -> Result<&'a str, CheckpointError> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| CheckpointError::Meta(format!("missing key {key:?}")))
}

fn meta_parse<V: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
) -> Result<V, CheckpointError> {
    meta_get(map, key)?
        .parse()
        .map_err(|_| CheckpointError::Meta(format!("bad value for {key:?}")))
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let read = |name: &str| std::fs::read_to_string(dir.join(name));

    let meta = meta_map(&read("meta.txt")?)?;
    let version = meta_get(&meta, "version")?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(CheckpointError::VersionMismatch {
            found: version.to_string(),
        });
    }
    let dtype = meta_get(&meta, "dtype")?;
    if dtype != T::DTYPE {
        return Err(CheckpointError::DtypeMismatch {
            want: T::DTYPE,
            got: dtype.to_string(),
        });
    }
    let modality = Modality::parse(meta_get(&meta, "modality")?)
        .ok_or_else(|| CheckpointError::Meta("unrecognized modality".into()))?;
    let dims = DataDims {
        modality,
        devices: meta_parse(&meta, "devices")?,
        channels: meta_parse(&meta, "channels")?,
        num_placements: meta_parse(&meta, "num_placements")?,
    };
    let vocab_total: u32 = meta_parse(&meta, "vocab_total")?;
    let seed: u64 = meta_parse(&meta, "seed")?;
    let step: u64 = meta_parse(&meta, "step")?;

    let run = RunConfig::parse(&read("config.txt")?)?;
    let vocab = Vocabulary::from_words(
        read("vocab.txt")?
            .lines()
            .map(|s| s.to_string())
            .collect(),
    );
    if vocab.total() != vocab_total {
        return Err(CheckpointError::Meta(format!(
            "vocab_total {} disagrees with vocab.txt ({} ids)",
            vocab_total,
            vocab.total()
        )));
    }

    let index = parse_index(&read("index.tsv")?)?;
    let payload = std::fs::read(dir.join("tensors.bin"))?;

    // The configuration dictates the parameter skeleton; the payload must
    // cover it exactly.
    let skeleton: CaptionModel<T> =
        CaptionModel::new(run.model_config(modality), dims, vocab_total, 0)?;
    let mut params = skeleton.params;
    let mut expected = std::collections::HashSet::new();
    for (name, t) in params.iter_mut() {
        let key = format!("param.{name}");
        let entry = index
            .get(&key)
            .ok_or_else(|| CheckpointError::MissingTensor { name: key.clone() })?;
        *t = read_tensor(&key, entry, t.shape(), &payload)?;
        expected.insert(key);
    }

    let mut opt = AdamState::new(
        &params,
        meta_parse(&meta, "adam.lr")?,
        meta_parse(&meta, "adam.weight_decay")?,
    );
    opt.beta1 = meta_parse(&meta, "adam.beta1")?;
    opt.beta2 = meta_parse(&meta, "adam.beta2")?;
    opt.eps = meta_parse(&meta, "adam.eps")?;
    opt.step = step;
    for (prefix, moments) in [("adam.m", &mut opt.m), ("adam.v", &mut opt.v)] {
        for (name, t) in moments.iter_mut() {
            let key = format!("{prefix}.{name}");
            let entry = index
                .get(&key)
                .ok_or_else(|| CheckpointError::MissingTensor { name: key.clone() })?;
            *t = read_tensor(&key, entry, t.shape(), &payload)?;
            expected.insert(key);
        }
    }

    if let Some(extra) = index.keys().find(|k| !expected.contains(*k)) {
        return Err(CheckpointError::UnexpectedTensor {
            name: extra.clone(),
        });
    }

    Ok(Checkpoint {
        run,
        dims,
        vocab,
        seed,
        params,
        opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AblationFlags;

    fn small_run() -> RunConfig {
        let mut r = RunConfig::default();
        r.d_model = 16;
        r.n_heads = 2;
        r.n_sa_layers = 1;
        r.n_text_layers = 1;
        r.n_convffn_blocks = 1;
        r.dw_kernel = 3;
        r.patch_len = 5;
        r.patch_stride = 5;
        r.t_max = 6;
        r.ablation = AblationFlags::default();
        r
    }

    fn small_dims() -> DataDims {
        DataDims {
            modality: Modality::Imu,
            devices: 2,
            channels: 3,
            num_placements: 2,
        }
    }

    fn sample_checkpoint(seed: u64) -> Checkpoint<f32> {
        let run = small_run();
        let dims = small_dims();
        let vocab = Vocabulary::from_words(vec![
            "walks".into(),
            "sits".into(),
            "the".into(),
            "person".into(),
        ]);
        let model: CaptionModel<f32> =
            CaptionModel::new(run.model_config(dims.modality), dims, vocab.total(), seed)
                .unwrap();
        let mut opt = AdamState::new(&model.params, 2e-4, 1e-3);
        opt.step = 17;
        Checkpoint {
            run,
            dims,
            vocab,
            seed,
            params: model.params,
            opt,
        }
    }

    #[test]
    fn round_trip_is_bit_exact_including_resave() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let ckpt = sample_checkpoint(5);
        save_checkpoint(&ckpt, &a).unwrap();
        let loaded: Checkpoint<f32> = load_checkpoint(&a).unwrap();

        for ((n0, t0), (n1, t1)) in ckpt.params.iter().zip(loaded.params.iter()) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            assert_eq!(t0.data(), t1.data(), "param {n0}");
        }
        assert_eq!(loaded.opt.step, 17);
        assert_eq!(loaded.opt.lr, 2e-4);
        assert_eq!(loaded.seed, 5);
        assert_eq!(loaded.vocab, ckpt.vocab);
        assert_eq!(loaded.dims, ckpt.dims);

        save_checkpoint(&loaded, &b).unwrap();
        let pa = std::fs::read(a.join("tensors.bin")).unwrap();
        let pb = std::fs::read(b.join("tensors.bin")).unwrap();
        assert_eq!(pa, pb, "save -> load -> save must not disturb the payload");
        assert_eq!(
            std::fs::read(a.join("index.tsv")).unwrap(),
            std::fs::read(b.join("index.tsv")).unwrap()
        );
    }

    #[test]
    fn version_and_dtype_mismatches_are_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c");
        save_checkpoint(&sample_checkpoint(1), &p).unwrap();

        let meta = std::fs::read_to_string(p.join("meta.txt")).unwrap();
        std::fs::write(p.join("meta.txt"), meta.replace("version = 1", "version = 9")).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&p),
            Err(CheckpointError::VersionMismatch { .. })
        ));
        std::fs::write(p.join("meta.txt"), meta).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&p),
            Err(CheckpointError::DtypeMismatch { .. })
        ));
    }

    #[test]
    fn wrong_d_model_reports_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c");
        save_checkpoint(&sample_checkpoint(1), &p).unwrap();
        let cfg = std::fs::read_to_string(p.join("config.txt")).unwrap();
        std::fs::write(
            p.join("config.txt"),
            cfg.replace("model.d_model = 16", "model.d_model = 32"),
        )
        .unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&p),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn truncated_payload_and_missing_tensor_name_the_culprit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c");
        save_checkpoint(&sample_checkpoint(1), &p).unwrap();

        let payload = std::fs::read(p.join("tensors.bin")).unwrap();
        std::fs::write(p.join("tensors.bin"), &payload[..payload.len() - 8]).unwrap();
        match load_checkpoint::<f32>(&p) {
            Err(CheckpointError::Truncated { name }) => {
                assert!(name.starts_with("adam.v."), "last tensors are v moments: {name}")
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
        std::fs::write(p.join("tensors.bin"), &payload).unwrap();

        let index = std::fs::read_to_string(p.join("index.tsv")).unwrap();
        let without: String = index
            .lines()
            .filter(|l| !l.starts_with("param.proj.w\t"))
            .map(|l| format!("{l}\n"))
            .collect();
        std::fs::write(p.join("index.tsv"), without).unwrap();
        match load_checkpoint::<f32>(&p) {
            Err(CheckpointError::MissingTensor { name }) => {
                assert_eq!(name, "param.proj.w")
            }
            other => panic!("expected missing tensor, got {other:?}"),
        }
    }

    #[test]
    fn decode_after_reload_matches_decode_before_save() {
        use crate::generator::{greedy_decode, DecodeConfig};

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c");
        let ckpt = sample_checkpoint(9);
        let seq = crate::encoder::SensorSequence {
            modality: Modality::Imu,
            devices: 2,
            channels: 3,
            len: 20,
            sample_rate_hz: 10.0,
            placement_ids: vec![0, 1],
            values: (0..120).map(|i| (i as f32 * 0.37).sin()).collect(),
        };
        let dc = DecodeConfig::with_t_max(ckpt.run.t_max);

        let before = {
            let model = ckpt.model().unwrap();
            greedy_decode(&model, &seq, &ckpt.vocab, &dc).unwrap()
        };
        save_checkpoint(&ckpt, &p).unwrap();
        let loaded: Checkpoint<f32> = load_checkpoint(&p).unwrap();
        let after = {
            let model = loaded.model().unwrap();
            greedy_decode(&model, &seq, &loaded.vocab, &dc).unwrap()
        };
        // untrained checkpoint must still decode, and identically
        assert_eq!(before.token_ids, after.token_ids);
        assert_eq!(before.caption, after.caption);
    }
}
