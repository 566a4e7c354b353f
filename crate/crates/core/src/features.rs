//! Item features: the bag-of-words text vocabulary and the binary embedding
//! store shared with the image feature extractor.
//!
//! Store layout (little-endian):
//!
//! ```text
//! "EMBD" | version: u16 = 1 | dim: u32 | count: u64
//! count x ( id_len: u16 | id: UTF-8 | dim x f32 )
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::Item;
use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"EMBD";
pub const STORE_VERSION: u16 = 1;
const STORE_HEADER_LEN: usize = 4 + 2 + 4 + 8;

/// Lowercases and splits on any non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token vocabulary ordered by descending corpus frequency, ties broken
/// lexicographically.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Structure(format!("duplicate vocabulary token `{w}`")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// One token per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_words(
            text.lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }
}

pub fn build_vocabulary<'a, I>(items: I, min_frequency: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a Item>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for item in items {
        for token in tokenize(&item.name) {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_frequency)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(w, _)| w).collect())
        .expect("counted tokens are unique")
}

/// Presence vector over the vocabulary (1.0 if the token occurs at least once).
pub fn encode_text(text: &str, vocab: &Vocabulary) -> Vec<f64> {
    let mut out = vec![0.0; vocab.len()];
    for token in tokenize(text) {
        if let Some(i) = vocab.position(&token) {
            out[i] = 1.0;
        }
    }
    out
}

pub fn encode_item(item: &Item, vocab: &Vocabulary) -> Vec<f64> {
    encode_text(&item.name, vocab)
}

/// Fixed-width vectors keyed by item id, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::Argument(format!("invalid embedding dim {dim}")));
        }
        Ok(EmbeddingStore {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, id: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Structure(format!(
                "vector for `{id}` has length {}, store dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("vector for `{id}` is not finite")));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::Argument(format!("item id too long ({} bytes)", id.len())));
        }
        if self.index.contains_key(id) {
            return Err(Error::Structure(format!("duplicate store id `{id}`")));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.data.extend_from_slice(&vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(id, v)| (id.as_str(), v))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(
            STORE_HEADER_LEN + self.ids.iter().map(|id| 2 + id.len()).sum::<usize>()
                + self.data.len() * 4,
        );
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (record, (id, vector)) in self.iter().enumerate() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for &v in vector {
                let narrow = v as f32;
                if !narrow.is_finite() {
                    return Err(Error::Format {
                        record,
                        message: format!("value {v} of `{id}` overflows f32"),
                    });
                }
                out.extend_from_slice(&narrow.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = ByteReader { bytes, pos: 0 };
        let header_err = |message: &str| Error::Format {
            record: 0,
            message: format!("header: {message}"),
        };
        let magic = reader.take(4).ok_or_else(|| header_err("truncated"))?;
        if magic != STORE_MAGIC {
            return Err(header_err("bad magic, expected `EMBD`"));
        }
        let version = reader.u16().ok_or_else(|| header_err("truncated"))?;
        if version != STORE_VERSION {
            return Err(header_err(&format!("unsupported version {version}")));
        }
        let dim = reader.u32().ok_or_else(|| header_err("truncated"))? as usize;
        let count = reader.u64().ok_or_else(|| header_err("truncated"))?;
        let mut store = EmbeddingStore::new(dim).map_err(|_| header_err("dim is zero"))?;

        for record in 0..count as usize {
            let truncated = || Error::Format {
                record,
                message: "truncated record".to_string(),
            };
            let id_len = reader.u16().ok_or_else(truncated)? as usize;
            let id = std::str::from_utf8(reader.take(id_len).ok_or_else(truncated)?)
                .map_err(|_| Error::Format {
                    record,
                    message: "id is not UTF-8".to_string(),
                })?
                .to_string();
            let payload = reader.take(dim * 4).ok_or_else(truncated)?;
            let vector: Vec<f64> = payload
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            store.insert(&id, vector).map_err(|e| Error::Format {
                record,
                message: e.to_string(),
            })?;
        }
        if reader.pos != bytes.len() {
            return Err(Error::Format {
                record: count as usize,
                message: format!("{} trailing bytes", bytes.len() - reader.pos),
            });
        }
        Ok(store)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn write_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = store.to_bytes()?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes)
}

/// Reads a store and checks its dimension against an expected value.
pub fn read_store_with_dim(path: impl AsRef<Path>, expected_dim: usize) -> Result<EmbeddingStore> {
    let store = read_store(path)?;
    if store.dim() != expected_dim {
        return Err(Error::Format {
            record: 0,
            message: format!("store dim {} does not match expected {expected_dim}", store.dim()),
        });
    }
    Ok(store)
}

/// A feature source feeding one scoring channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Visual,
    Text,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Visual => "visual",
            Channel::Text => "text",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Visual,
    Textual,
    Multimodal,
}

impl Modality {
    pub fn channels(self) -> &'static [Channel] {
        match self {
            Modality::Visual => &[Channel::Visual],
            Modality::Textual => &[Channel::Text],
            Modality::Multimodal => &[Channel::Visual, Channel::Text],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
            Modality::Multimodal => "multimodal",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Modality::Visual),
            "textual" | "text" => Ok(Modality::Textual),
            "multimodal" => Ok(Modality::Multimodal),
            other => Err(Error::Argument(format!(
                "unknown modality `{other}` (expected visual, textual or multimodal)"
            ))),
        }
    }
}

/// Modality plus the visual weight used when both channels are fused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalityConfig {
    pub mode: Modality,
    pub beta: f64,
}

impl ModalityConfig {
    pub fn new(mode: Modality, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Argument(format!("beta must lie in [0, 1], got {beta}")));
        }
        Ok(ModalityConfig { mode, beta })
    }

    pub fn visual() -> Self {
        ModalityConfig {
            mode: Modality::Visual,
            beta: 1.0,
        }
    }

    pub fn textual() -> Self {
        ModalityConfig {
            mode: Modality::Textual,
            beta: 0.0,
        }
    }

    /// Score weight for a channel: beta for visual, 1 - beta for text in
    /// multimodal mode, 1 otherwise.
    pub fn channel_weight(&self, channel: Channel) -> f64 {
        match (self.mode, channel) {
            (Modality::Multimodal, Channel::Visual) => self.beta,
            (Modality::Multimodal, Channel::Text) => 1.0 - self.beta,
            _ => 1.0,
        }
    }
}

/// Loaded embedding stores, one per channel.
#[derive(Debug, Clone, Default)]
pub struct FeatureStores {
    pub visual: Option<EmbeddingStore>,
    pub text: Option<EmbeddingStore>,
}

impl FeatureStores {
    pub fn store(&self, channel: Channel) -> Option<&EmbeddingStore> {
        match channel {
            Channel::Visual => self.visual.as_ref(),
            Channel::Text => self.text.as_ref(),
        }
    }

    pub fn lookup(&self, item_id: &str, channel: Channel) -> Result<&[f64]> {
        let store = self.store(channel).ok_or_else(|| {
            Error::Argument(format!("no {} embedding store loaded", channel.as_str()))
        })?;
        store.get(item_id).ok_or_else(|| Error::Lookup {
            id: item_id.to_string(),
            source_name: format!("{} store", channel.as_str()),
        })
    }
}

/// Feature vectors for an item, one per channel of the modality
/// (visual first in multimodal mode).
pub fn get_features<'a>(
    item_id: &str,
    modality: Modality,
    stores: &'a FeatureStores,
) -> Result<Vec<&'a [f64]>> {
    modality
        .channels()
        .iter()
        .map(|&channel| stores.lookup(item_id, channel))
        .collect()
}
