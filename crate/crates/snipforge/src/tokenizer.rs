//! Byte-level BPE tokenizer.
//!
//! Loads a model file (JSON with a `vocab` token->id map and an ordered
//! `merges` pair list) and encodes text deterministically: bytes are first
//! mapped to the printable-unicode alphabet, then adjacent pairs are merged
//! greedily in merge-priority order until no ranked pair remains.
//!
//! No default vocabulary is bundled; the model file is a configuration input.

use crate::error::{Error, Result};
use serde::Deserialize;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

#[derive(Debug, Deserialize)]
struct ModelFile {
    vocab: HashMap<String, u32>,
    merges: Vec<(String, String)>,
}

/// Id used for symbols absent from the vocabulary. A well-formed byte-level
/// model covers all 256 base symbols, so this only appears with clipped vocabs.
pub const UNKNOWN_TOKEN_ID: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    vocab: HashMap<String, u32>,
    merge_ranks: HashMap<(String, String), u32>,
    byte_alphabet: [char; 256],
}

impl BpeTokenizer {
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::VocabMissing {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json(&raw).map_err(|e| Error::VocabMissing {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn from_json(raw: &str) -> serde_json::Result<Self> {
        let model: ModelFile = serde_json::from_str(raw)?;
        let merge_ranks = model
            .merges
            .into_iter()
            .enumerate()
            .map(|(rank, pair)| (pair, rank as u32))
            .collect();
        Ok(Self {
            vocab: model.vocab,
            merge_ranks,
            byte_alphabet: byte_alphabet(),
        })
    }

    /// Encode text into token ids, in order, with repetition.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.tokens(text)
            .iter()
            .map(|tok| self.vocab.get(tok).copied().unwrap_or(UNKNOWN_TOKEN_ID))
            .collect()
    }

    /// Number of subword tokens the text encodes to. Empty text is 0 tokens.
    pub fn count(&self, text: &str) -> u32 {
        self.tokens(text).len() as u32
    }

    /// Distinct token ids, the representation used for Jaccard dedup.
    pub fn token_id_set(&self, text: &str) -> BTreeSet<u32> {
        self.encode(text).into_iter().collect()
    }

    /// The token strings after all merges, before id lookup.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        if text.is_empty() {
            return Vec::new();
        }
        let mut symbols: Vec<String> = text
            .bytes()
            .map(|b| self.byte_alphabet[b as usize].to_string())
            .collect();

        loop {
            // Lowest rank = highest priority merge among adjacent pairs.
            let mut best: Option<(u32, usize)> = None;
            for i in 0..symbols.len().saturating_sub(1) {
                let key = (symbols[i].clone(), symbols[i + 1].clone());
                if let Some(&rank) = self.merge_ranks.get(&key) {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((_, at)) = best else { break };

            // Merge every occurrence of the chosen pair, left to right.
            let first = symbols[at].clone();
            let second = symbols[at + 1].clone();
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == first && symbols[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }
}

/// GPT-2 style byte-to-unicode alphabet: printable bytes map to themselves,
/// the rest to codepoints from U+0100 upward, so every byte has a visible,
/// unambiguous character.
fn byte_alphabet() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut assigned = [false; 256];
    let printable = (b'!'..=b'~').chain(0xA1..=0xAC).chain(0xAE..=0xFF);
    for b in printable {
        table[b as usize] = char::from_u32(b as u32).expect("latin-1 range");
        assigned[b as usize] = true;
    }
    let mut next = 0u32;
    for b in 0..256 {
        if !assigned[b] {
            table[b] = char::from_u32(256 + next).expect("BMP range");
            next += 1;
        }
    }
    table
}

/// Map raw text into the byte alphabet (e.g. space becomes `Ġ`). Useful when
/// constructing model files whose merges involve whitespace bytes.
pub fn map_bytes(text: &str) -> String {
    let alphabet = byte_alphabet();
    text.bytes().map(|b| alphabet[b as usize]).collect()
}

/// Build the JSON text of a small deterministic model covering all 256 base
/// symbols plus the given merges. Used by tests and by callers that need a
/// self-contained model for fixtures.
pub fn model_json(merges: &[(&str, &str)]) -> String {
    let alphabet = byte_alphabet();
    let mut vocab: Vec<(String, u32)> = alphabet
        .iter()
        .enumerate()
        .map(|(i, c)| (c.to_string(), i as u32))
        .collect();
    let mut merge_list = Vec::new();
    for (next_id, (a, b)) in (256u32..).zip(merges.iter()) {
        vocab.push((format!("{a}{b}"), next_id));
        merge_list.push(vec![a.to_string(), b.to_string()]);
    }
    let vocab_map: serde_json::Map<String, serde_json::Value> = vocab
        .into_iter()
        .map(|(tok, id)| (tok, serde_json::Value::from(id)))
        .collect();
    serde_json::to_string(&serde_json::json!({
        "vocab": vocab_map,
        "merges": merge_list,
    }))
    .expect("static model serializes")
}
