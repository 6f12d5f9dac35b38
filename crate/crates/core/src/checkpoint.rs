//! Model checkpoint container.
//!
//! | bytes     | content                                          |
//! |-----------|--------------------------------------------------|
//! | 0–3       | ASCII `MMCK`                                     |
//! | 4–5       | version, little-endian `u16` (= 1)               |
//! | 6–9       | header length `N`, little-endian `u32`           |
//! | 10–10+N   | UTF-8 JSON header                                |
//! | 10+N–     | concatenated MMCF records, one per tensor        |
//!
//! The header holds `config` (the model config), `vocab` (same object as a
//! vocabulary file) and `tensors`, a directory of
//! `{name, kind, shape, offset, length}` where `offset`/`length` locate the
//! tensor's MMCF record in bytes from the start of the payload section.
//! `kind` is `param`, `bn_mean` or `bn_var`. Every tensor is stored as a
//! `shape[0] × (product of the rest)` matrix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, RunningStats, Tensor};
use crate::config::ModelConfig;
use crate::dataio::{FeatureMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::generator::Model;
use crate::mmcnn::block_channels;

pub const MAGIC: [u8; 4] = *b"MMCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    BnMean,
    BnVar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn as_matrix(shape: &[usize], data: &[f32]) -> FeatureMatrix {
    let rows = shape[0];
    FeatureMatrix::new(rows, data.len() / rows, data.to_vec()).expect("tensor values are finite")
}

pub fn to_bytes(model: &Model, vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    let mut push = |name: String, kind, shape: Vec<usize>, data: &[f32]| {
        let bytes = as_matrix(&shape, data).to_bytes();
        entries.push(TensorEntry {
            name,
            kind,
            shape,
            offset: payload.len(),
            length: bytes.len(),
        });
        payload.extend_from_slice(&bytes);
    };
    for (_, name, t) in model.store.iter() {
        push(name.to_owned(), TensorKind::Param, t.shape().to_vec(), t.data());
    }
    for (branch, br) in model.branches() {
        for (b, stats) in br.cnn.stats.iter().enumerate() {
            for (j, s) in stats.iter().enumerate() {
                if !s.initialized {
                    return Err(Error::Checkpoint(format!("{branch} block {b} has no batch statistics")));
                }
                let name = format!("{branch}.cnn.{b}.bn{}", j + 1);
                push(name.clone(), TensorKind::BnMean, vec![s.channels()], &s.mean);
                push(name, TensorKind::BnVar, vec![s.channels()], &s.var);
            }
        }
    }
    let header = Header {
        config: model.config.clone(),
        vocab: serde_json::from_str(&vocab.to_json())?,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(10 + json.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, Vocabulary)> {
    if bytes.len() < 10 {
        return Err(Error::Truncated {
            expected: 10,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let start = 10 + n;
    if bytes.len() < start {
        return Err(Error::Truncated {
            expected: start,
            actual: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[10..start])?;
    let payload = &bytes[start..];
    let vocab = Vocabulary::from_json(&header.vocab.to_string())?;
    let cfg = header.config;

    let blocks = cfg.blocks;
    let mut visual_stats = vec![[0, 1, 2].map(|_| RunningStats::uninitialized(0)); if cfg.mode.uses_visual() { blocks } else { 0 }];
    let mut audio_stats = vec![[0, 1, 2].map(|_| RunningStats::uninitialized(0)); if cfg.mode.uses_audio() { blocks } else { 0 }];
    let mut store = ParamStore::new();
    let mut end = 0;
    for e in &header.tensors {
        let record = payload
            .get(e.offset..e.offset + e.length)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` lies outside the payload", e.name)))?;
        let m = FeatureMatrix::from_bytes(record)?;
        let numel: usize = e.shape.iter().product();
        if e.shape.is_empty() || m.rows() != e.shape[0] || m.values().len() != numel {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` stored as {}x{}, directory says {:?}",
                e.name,
                m.rows(),
                m.cols(),
                e.shape
            )));
        }
        end = end.max(e.offset + e.length);
        match e.kind {
            TensorKind::Param => {
                if store.id(&e.name).is_some() {
                    return Err(Error::Checkpoint(format!("duplicate tensor `{}`", e.name)));
                }
                store.add(e.name.clone(), Tensor::new(e.shape.clone(), m.into_values())?);
            }
            TensorKind::BnMean | TensorKind::BnVar => {
                let slot = stats_slot(&e.name, &mut visual_stats, &mut audio_stats)?;
                if e.kind == TensorKind::BnMean {
                    slot.mean = m.into_values();
                } else {
                    slot.var = m.into_values();
                }
            }
        }
    }
    if end != payload.len() {
        return Err(Error::Checkpoint(format!("{} unreferenced payload bytes", payload.len() - end)));
    }
    for (branch, stats, hidden) in [("visual", &mut visual_stats, cfg.visual_hidden), ("audio", &mut audio_stats, cfg.audio_hidden)] {
        let want = block_channels(cfg.embed_dim + hidden);
        for (b, st) in stats.iter_mut().enumerate() {
            for (j, s) in st.iter_mut().enumerate() {
                if s.mean.len() != want[j] || s.var.len() != want[j] {
                    return Err(Error::Checkpoint(format!("missing or misshapen stats `{branch}.cnn.{b}.bn{}`", j + 1)));
                }
                s.initialized = true;
            }
        }
    }
    let model = Model::from_parts(cfg, store, visual_stats, audio_stats)?;
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries, model has {} outputs",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    Ok((model, vocab))
}

fn stats_slot<'a>(
    name: &str,
    visual: &'a mut [[RunningStats; 3]],
    audio: &'a mut [[RunningStats; 3]],
) -> Result<&'a mut RunningStats> {
    let bad = || Error::Checkpoint(format!("unexpected statistics tensor `{name}`"));
    let parts: Vec<&str> = name.split('.').collect();
    let [branch, "cnn", block, layer] = parts[..] else {
        return Err(bad());
    };
    let stats = match branch {
        "visual" => visual,
        "audio" => audio,
        _ => return Err(bad()),
    };
    let b: usize = block.parse().map_err(|_| bad())?;
    let j: usize = layer.strip_prefix("bn").and_then(|l| l.parse().ok()).ok_or_else(bad)?;
    stats.get_mut(b).and_then(|s| s.get_mut(j.wrapping_sub(1))).ok_or_else(bad)
}

pub fn save(path: &Path, model: &Model, vocab: &Vocabulary) -> Result<()> {
    std::fs::write(path, to_bytes(model, vocab)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, Vocabulary)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
