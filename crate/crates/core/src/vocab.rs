//! Word-level tokenizer and vocabulary.
//!
//! Text is lowercased and split into runs of alphanumeric characters; every
//! other non-space character becomes its own token. Canonical text is the
//! tokens joined by single spaces, so `decode(encode(t)) == t` for canonical
//! in-vocabulary `t`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const CLS: TokenId = 4;

/// Surface forms of the reserved ids, in id order.
pub const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<cls>"];

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(core::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Tokenized, space-joined form of `text`.
pub fn canonical(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds from texts keeping tokens seen at least `min_freq` times,
    /// ordered by descending frequency, then lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let min_freq = min_freq.max(1);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for tok in tokenize(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, c)| *c >= min_freq && !RESERVED.contains(&tok.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(kept.into_iter().map(|(t, _)| t))
            .expect("built tokens are unique")
    }

    fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        Self::from_tokens(tokens)
    }

    /// Restores a vocabulary from its full token list (reserved entries first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::schema(None, "vocabulary must start with the reserved tokens"));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::schema(None, alloc::format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins tokens with spaces. PAD, BOS, EOS and CLS are dropped; UNK
    /// renders as `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if matches!(id, PAD | BOS | EOS | CLS) {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id).unwrap_or(RESERVED[UNK as usize]));
        }
        out
    }
}
