//! Word-hash tokenizer: lowercase, split on ASCII whitespace, hash each word
//! with FNV-1a-64 into the non-special part of the vocabulary.

use std::hash::Hasher;

use fnv::FnvHasher;

use super::config::ModelConfig;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const PAD: u32 = 2;
pub const N_SPECIAL: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokens {
    pub ids: Vec<u32>,
    pub eos_index: usize,
}

impl Tokens {
    /// Wraps an explicit id sequence, locating the first EOS (or the last slot).
    pub fn from_ids(ids: Vec<u32>) -> Self {
        let eos_index = ids
            .iter()
            .position(|&t| t == EOS)
            .unwrap_or(ids.len().saturating_sub(1));
        Self { ids, eos_index }
    }

    /// Positions strictly between BOS and EOS.
    pub fn content_positions(&self) -> Vec<usize> {
        (1..self.eos_index)
            .filter(|&i| self.ids[i] >= N_SPECIAL)
            .collect()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn word_id(word: &str, vocab_size: usize) -> u32 {
    let span = (vocab_size as u64) - N_SPECIAL as u64;
    N_SPECIAL + (fnv1a64(word.as_bytes()) % span) as u32
}

pub fn tokenize(text: &str, config: &ModelConfig) -> Tokens {
    let lower = text.to_lowercase();
    let mut ids = vec![BOS];
    ids.extend(
        lower
            .split_ascii_whitespace()
            .map(|w| word_id(w, config.vocab_size)),
    );
    ids.push(EOS);
    let max = config.max_text_len;
    if ids.len() > max {
        ids.truncate(max);
        ids[max - 1] = EOS;
    }
    let eos_index = ids.len() - 1;
    ids.resize(max, PAD);
    Tokens { ids, eos_index }
}
