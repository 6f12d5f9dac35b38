use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: usize = 4;
pub const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Lowercases, drops characters outside `[a-z0-9']`, splits on whitespace.
pub fn tokenize(caption: &str) -> Vec<String> {
    let cleaned: String = caption
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '\'' || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VocabFile {
    min_freq: usize,
    tokens: Vec<String>,
}

/// Word ↔ id mapping with fixed control tokens at ids 0–3.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocabulary {
    /// Keeps tokens with corpus frequency `≥ min_freq`, ordered by descending
    /// frequency with alphabetical ties.
    pub fn build<S: AsRef<str>>(captions: &[S], min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for c in captions {
            for tok in tokenize(c.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, n)| *n >= min_freq.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(kept.into_iter().map(|(w, _)| w), min_freq)
            .expect("tokenizer output never collides with reserved tokens")
    }

    fn from_words(content: impl Iterator<Item = String>, min_freq: usize) -> Result<Self> {
        let mut words: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        words.extend(content);
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Vocabulary {
            words,
            ids,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == RESERVED
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.get(word).is_some_and(|&i| i >= RESERVED)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or("<unk>", String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, caption: &str) -> Vec<usize> {
        tokenize(caption).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.word(i).to_owned()).collect()
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            min_freq: self.min_freq,
            tokens: self.words.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.tokens.len() < RESERVED || file.tokens[..RESERVED] != RESERVED_TOKENS {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <pad>, <sos>, <eos>, <unk>".into(),
            ));
        }
        Self::from_words(file.tokens.into_iter().skip(RESERVED), file.min_freq)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
