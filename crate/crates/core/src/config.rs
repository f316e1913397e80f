//! Flat textual run configuration with dotted keys.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines ignored. Every key is optional and defaults to the values below;
//! unknown or duplicate keys are rejected so typos cannot silently change
//! an experiment.

use crate::encoder::Modality;
use crate::model::{AblationFlags, ModelConfig, PatchConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: key {key:?} needs a {want} value, got {value:?}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        want: &'static str,
    },
    #[error("configuration rejected: {0}")]
    Invalid(String),
}

/// Everything a run needs. `n_final_pwconv` stays unset until a modality
/// is known (1 for IMU, 2 for Wi-Fi).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_sa_layers: usize,
    pub n_text_layers: usize,
    pub n_convffn_blocks: usize,
    pub dw_kernel: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
    pub pe_base_sensor: f64,
    pub pe_base_text: f64,
    pub n_final_pwconv: Option<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub t_max: usize,
    pub ablation: AblationFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_sa_layers: m.n_sa_layers,
            n_text_layers: m.n_text_layers,
            n_convffn_blocks: m.n_convffn_blocks,
            dw_kernel: m.dw_kernel,
            patch_len: m.patch.patch_len,
            patch_stride: m.patch.stride,
            pe_base_sensor: m.pe_base_sensor,
            pe_base_text: m.pe_base_text,
            n_final_pwconv: None,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            t_max: m.t_max,
            ablation: AblationFlags::default(),
        }
    }
}

pub fn default_final_pwconv(modality: Modality) -> usize {
    match modality {
        Modality::Imu => 1,
        Modality::Wifi => 2,
    }
}

impl RunConfig {
    /// Concrete model configuration once the modality fixes the default
    /// trailing PWConv count. The FFN width tracks d_model at 2x.
    pub fn model_config(&self, modality: Modality) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_sa_layers: self.n_sa_layers,
            n_text_layers: self.n_text_layers,
            n_convffn_blocks: self.n_convffn_blocks,
            dw_kernel: self.dw_kernel,
            patch: PatchConfig {
                patch_len: self.patch_len,
                stride: self.patch_stride,
            },
            pe_base_sensor: self.pe_base_sensor,
            pe_base_text: self.pe_base_text,
            n_final_pwconv: self
                .n_final_pwconv
                .unwrap_or_else(|| default_final_pwconv(modality)),
            ffn_width: 2 * self.d_model,
            t_max: self.t_max,
            ablation: self.ablation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Bounds checks shared by load and save.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_config(Modality::Imu)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.n_final_pwconv == Some(0) {
            return Err(ConfigError::Invalid(
                "model.n_final_pwconv must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            set_key(&mut cfg, key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("model.d_model", self.d_model.to_string());
        kv("model.n_heads", self.n_heads.to_string());
        kv("model.n_sa_layers", self.n_sa_layers.to_string());
        kv("model.n_text_layers", self.n_text_layers.to_string());
        kv("model.n_convffn_blocks", self.n_convffn_blocks.to_string());
        kv("model.dw_kernel", self.dw_kernel.to_string());
        kv("model.patch.P", self.patch_len.to_string());
        kv("model.patch.S", self.patch_stride.to_string());
        kv("model.pe_base_sensor", format!("{:?}", self.pe_base_sensor));
        kv("model.pe_base_text", format!("{:?}", self.pe_base_text));
        if let Some(n) = self.n_final_pwconv {
            kv("model.n_final_pwconv", n.to_string());
        }
        kv("train.lr", format!("{:?}", self.lr));
        kv("train.weight_decay", format!("{:?}", self.weight_decay));
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.seed", self.seed.to_string());
        kv("decode.t_max", self.t_max.to_string());
        kv("ablation.patch", self.ablation.patch.to_string());
        kv("ablation.pe", self.ablation.pe.to_string());
        kv("ablation.placement", self.ablation.placement.to_string());
        kv("ablation.convffn", self.ablation.convffn.to_string());
        s
    }
}

fn set_key(cfg: &mut RunConfig, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
    fn parse_as<V: std::str::FromStr>(
        key: &str,
        value: &str,
        line: usize,
        want: &'static str,
    ) -> Result<V, ConfigError> {
        value.parse().map_err(|_| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            want,
        })
    }
    macro_rules! usize_key {
        ($field:expr) => {{
            $field = parse_as::<usize>(key, value, line, "positive integer")?;
        }};
    }
    macro_rules! f64_key {
        ($field:expr) => {{
            $field = parse_as::<f64>(key, value, line, "real number")?;
        }};
    }
    macro_rules! bool_key {
        ($field:expr) => {{
            $field = match value {
                "true" => true,
                "false" => false,
                _ => {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        value: value.to_string(),
                        want: "true or false",
                    })
                }
            };
        }};
    }
    match key {
        "model.d_model" => usize_key!(cfg.d_model),
        "model.n_heads" => usize_key!(cfg.n_heads),
        "model.n_sa_layers" => usize_key!(cfg.n_sa_layers),
        "model.n_text_layers" => usize_key!(cfg.n_text_layers),
        "model.n_convffn_blocks" => usize_key!(cfg.n_convffn_blocks),
        "model.dw_kernel" => usize_key!(cfg.dw_kernel),
        "model.patch.P" => usize_key!(cfg.patch_len),
        "model.patch.S" => usize_key!(cfg.patch_stride),
        "model.pe_base_sensor" => f64_key!(cfg.pe_base_sensor),
        "model.pe_base_text" => f64_key!(cfg.pe_base_text),
        "model.n_final_pwconv" => {
            cfg.n_final_pwconv = Some(parse_as::<usize>(key, value, line, "positive integer")?)
        }
        "train.lr" => f64_key!(cfg.lr),
        "train.weight_decay" => f64_key!(cfg.weight_decay),
        "train.batch_size" => usize_key!(cfg.batch_size),
        "train.epochs" => usize_key!(cfg.epochs),
        "train.seed" => {
            cfg.seed = parse_as::<u64>(key, value, line, "unsigned integer")?;
        }
        "decode.t_max" => usize_key!(cfg.t_max),
        "ablation.patch" => bool_key!(cfg.ablation.patch),
        "ablation.pe" => bool_key!(cfg.ablation.pe),
        "ablation.placement" => bool_key!(cfg.ablation.placement),
        "ablation.convffn" => bool_key!(cfg.ablation.convffn),
        _ => {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            })
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.d_model, 128);
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.t_max, 50);
        assert!(c.ablation.patch && c.ablation.pe && c.ablation.placement && c.ablation.convffn);
    }

    #[test]
    fn parses_keys_comments_and_whitespace() {
        let text = "\n# experiment\nmodel.d_model = 64\n  model.patch.P=10  # patch\nmodel.patch.S = 5\ntrain.seed = 9\nablation.pe = false\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.d_model, 64);
        assert_eq!(c.patch_len, 10);
        assert_eq!(c.patch_stride, 5);
        assert_eq!(c.seed, 9);
        assert!(!c.ablation.pe);
        assert!(c.ablation.patch);
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_rejected() {
        assert!(matches!(
            RunConfig::parse("model.dmodel = 4"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("train.seed = 1\ntrain.seed = 2"),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(
            RunConfig::parse("just words"),
            Err(ConfigError::BadLine { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("train.lr = fast"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("ablation.pe = yes"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
    }

    #[test]
    fn bounds_checked_at_load() {
        assert!(matches!(
            RunConfig::parse("model.d_model = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::parse("model.n_heads = 3"), // does not divide 128
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::parse("train.batch_size = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::parse("model.n_final_pwconv = 0"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn serialize_round_trips() {
        let mut c = RunConfig::default();
        c.d_model = 32;
        c.n_heads = 2;
        c.n_final_pwconv = Some(2);
        c.lr = 3e-4;
        c.ablation.convffn = false;
        let text = c.serialize();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, c);

        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.serialize()).unwrap(), d);
    }

    #[test]
    fn modality_defaults_for_final_pwconv() {
        let c = RunConfig::default();
        assert_eq!(c.model_config(Modality::Imu).n_final_pwconv, 1);
        assert_eq!(c.model_config(Modality::Wifi).n_final_pwconv, 2);
        let mut c = RunConfig::default();
        c.n_final_pwconv = Some(3);
        assert_eq!(c.model_config(Modality::Imu).n_final_pwconv, 3);
    }
}
