//! Word-level tokenizer and vocabulary for the toy text-to-text model.
//!
//! Tokenization lowercases the text, takes maximal alphanumeric runs as
//! tokens, and makes every other non-whitespace character its own token.
//! `detokenize` joins tokens with single spaces, so
//! `detokenize(tokenize(t))` is the canonical normalized form of `t` and
//! tokenizing that form again is the identity.
//!
//! Ids 0–2 are reserved: padding, end-of-sequence, unknown. Vocabulary files
//! store one token per line; the token on line `i` (0-based) has id `i + 3`.

use crate::data::DataError;
use std::collections::HashMap;
use std::path::Path;

/// Padding id; also the decoder start symbol.
pub const PAD: usize = 0;
/// End-of-sequence id, appended to every training target.
pub const EOS: usize = 1;
/// Unknown-token id for out-of-vocabulary words.
pub const UNK: usize = 2;

const SPECIALS: usize = 3;

/// Lowercase and split into maximal alphanumeric runs plus single
/// punctuation characters. Whitespace only separates.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            run.push(ch);
        } else {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

/// Canonical text form: tokens joined by single spaces.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from a corpus: tokens ranked by frequency (descending), ties by
    /// token text (ascending), keeping at most `max_tokens` entries beyond
    /// the three reserved ids.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_tokens: usize) -> Vocab {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_tokens);
        Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t).collect())
            .expect("tokenizer output is non-empty and unique")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Vocab, DataError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(DataError::Io {
                    path: String::new(),
                    msg: "empty token in vocabulary".into(),
                });
            }
            if index.insert(tok.clone(), i + SPECIALS).is_some() {
                return Err(DataError::Io {
                    path: String::new(),
                    msg: format!("duplicate token {tok:?} in vocabulary"),
                });
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Total id count including the three reserved ids; the logits width.
    pub fn len(&self) -> usize {
        self.tokens.len() + SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved ids always exist
    }

    /// Id for one token; unknown tokens map to [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Tokenize and map to ids. No EOS is appended; callers that need a
    /// terminated target push [`EOS`] themselves.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Token text for an id; `None` for reserved or out-of-range ids.
    pub fn token_text(&self, id: usize) -> Option<&str> {
        id.checked_sub(SPECIALS).and_then(|i| self.tokens.get(i)).map(String::as_str)
    }

    /// Render generated ids as text: stop at the first [`EOS`], skip
    /// [`PAD`], print unknowns as `<unk>`.
    pub fn decode_text(&self, ids: &[usize]) -> String {
        let mut parts: Vec<&str> = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD => continue,
                UNK => parts.push("<unk>"),
                _ => parts.push(self.token_text(id).unwrap_or("<unk>")),
            }
        }
        parts.join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        crate::data::shards::atomic_write(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Vocab, DataError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DataError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        let tokens: Vec<String> =
            text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect();
        Vocab::from_tokens(tokens).map_err(|e| match e {
            DataError::Io { msg, .. } => DataError::Io { path: path.display().to_string(), msg },
            other => other,
        })
    }
}
