//! Vocabulary, tokenization, and the causal Transformer text encoder.

use std::collections::HashMap;

use crate::attention::{encoder_layer, LayerWeights};
use crate::graph::{Graph, NodeId};
use crate::model::{ModelConfig, ModelError};
use crate::params::BoundParams;
use crate::pe::pe_table;
use crate::scalar::Scalar;

pub const PAD_ID: u32 = 0;
pub const SOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const NUM_SPECIALS: u32 = 4;

pub const SPECIAL_NAMES: [&str; 4] = ["<PAD>", "<SOS>", "<EOS>", "<UNK>"];

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of {total}")]
    IdRange { id: u32, total: u32 },
    #[error("token sequence invalid: {0}")]
    BadSequence(String),
}

/// Lowercases, strips non-alphanumeric characters, splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let w: String = raw
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(|c| c.to_lowercase())
                .collect();
            if w.is_empty() {
                None
            } else {
                Some(w)
            }
        })
        .collect()
}

/// Frequency-capped word vocabulary. Content ids are dense and start right
/// after the four specials; their order (frequency descending, ties
/// lexicographic ascending) is the canonical persisted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn build(corpus: &[String], k: usize) -> Result<Self, TextError> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for w in normalize(line) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(k);
        Ok(Self::from_words(ranked.into_iter().map(|(w, _)| w).collect()))
    }

    /// Rebuilds from the persisted word list (one content word per id slot).
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), NUM_SPECIALS + i as u32))
            .collect();
        Self { words, index }
    }

    pub fn content_words(&self) -> &[String] {
        &self.words
    }

    /// Total id count including the four specials.
    pub fn total(&self) -> u32 {
        NUM_SPECIALS + self.words.len() as u32
    }

    pub fn id_of(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word_of(&self, id: u32) -> Result<&str, TextError> {
        if id < NUM_SPECIALS {
            return Ok(SPECIAL_NAMES[id as usize]);
        }
        self.words
            .get((id - NUM_SPECIALS) as usize)
            .map(|s| s.as_str())
            .ok_or(TextError::IdRange {
                id,
                total: self.total(),
            })
    }
}

/// Caption as token ids. At most one <EOS>; <SOS> only at position 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, vocab_total: u32) -> Result<Self, TextError> {
        for &id in &ids {
            if id >= vocab_total {
                return Err(TextError::IdRange {
                    id,
                    total: vocab_total,
                });
            }
        }
        if ids.iter().filter(|&&id| id == EOS_ID).count() > 1 {
            return Err(TextError::BadSequence("more than one <EOS>".into()));
        }
        if ids.iter().skip(1).any(|&id| id == SOS_ID) {
            return Err(TextError::BadSequence(
                "<SOS> only allowed at position 0".into(),
            ));
        }
        Ok(Self { ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Normalized words to ids; out-of-vocabulary words map to <UNK>.
/// No specials are added here.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let ids = normalize(text).iter().map(|w| vocab.id_of(w)).collect();
    TokenSequence { ids }
}

/// Drops special ids and joins content words with single spaces.
pub fn detokenize(ids: &[u32], vocab: &Vocabulary) -> Result<String, TextError> {
    let mut words = Vec::new();
    for &id in ids {
        if id >= vocab.total() {
            return Err(TextError::IdRange {
                id,
                total: vocab.total(),
            });
        }
        if id >= NUM_SPECIALS {
            words.push(vocab.word_of(id)?);
        }
    }
    Ok(words.join(" "))
}

/// Contextual text features: embedding + positional encoding, then
/// `n_text_layers` causally masked encoder layers. Output [L2, d_model].
pub fn text_encode<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    ids: &[u32],
) -> Result<NodeId, ModelError> {
    if ids.is_empty() {
        return Err(ModelError::BadInput("empty token sequence".into()));
    }
    if ids.len() > cfg.max_text_len() {
        return Err(ModelError::BadInput(format!(
            "token sequence length {} exceeds max_text_len {}",
            ids.len(),
            cfg.max_text_len()
        )));
    }
    let table = p.id("text.embed")?;
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let emb = g.gather_rows(table, &idx)?;
    let pe = pe_table::<T>(cfg.d_model, cfg.pe_base_text, ids.len())?;
    let pe_id = g.constant(pe);
    let mut x = g.add(emb, pe_id)?;
    for l in 0..cfg.n_text_layers {
        let lw = LayerWeights::lookup(p, &format!("text.{l}"))?;
        x = encoder_layer(g, &lw, cfg.n_heads, x, true)?;
    }
    Ok(x)
}
