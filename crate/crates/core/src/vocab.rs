//! Token vocabulary for the arithmetic task domain.
//!
//! The vocabulary is fixed for the lifetime of a run: ten digits, the four
//! operators `+ - * %`, a separator, end-of-sequence, the six tag tokens that
//! delimit the plan/think/answer spans, and a reserved begin token used only
//! to pad short contexts in the policy table. Tag tokens are single
//! vocabulary entries, never character sequences.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// Index into the vocabulary.
pub type TokenId = usize;

/// The fixed token inventory. Ids are stable across a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
}

// Fixed id layout: digits first so `id == digit value` holds for 0..=9.
pub const DIGIT_BASE: TokenId = 0;
pub const PLUS: TokenId = 10;
pub const MINUS: TokenId = 11;
pub const STAR: TokenId = 12;
pub const MOD: TokenId = 13;
pub const SEP: TokenId = 14;
pub const EOS: TokenId = 15;
pub const PLAN_OPEN: TokenId = 16;
pub const PLAN_CLOSE: TokenId = 17;
pub const THINK_OPEN: TokenId = 18;
pub const THINK_CLOSE: TokenId = 19;
pub const ANSWER_OPEN: TokenId = 20;
pub const ANSWER_CLOSE: TokenId = 21;
/// Reserved begin token: pads contexts shorter than the policy's order K.
/// Never emitted and never appears in questions or responses.
pub const BOS: TokenId = 22;

pub const VOCAB_SIZE: usize = 23;

const TAG_TOKENS: [TokenId; 6] = [
    PLAN_OPEN,
    PLAN_CLOSE,
    THINK_OPEN,
    THINK_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
];

impl Vocab {
    /// The standard 23-symbol vocabulary used everywhere in this crate.
    pub fn standard() -> Self {
        let mut symbols: Vec<String> = (0..10).map(|d| d.to_string()).collect();
        for s in [
            "+",
            "-",
            "*",
            "%",
            "|",
            "<eos>",
            "<plan>",
            "</plan>",
            "<think>",
            "</think>",
            "<answer>",
            "</answer>",
            "<bos>",
        ] {
            symbols.push(s.to_string());
        }
        debug_assert_eq!(symbols.len(), VOCAB_SIZE);
        Self { symbols }
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn is_digit(&self, id: TokenId) -> bool {
        id < 10
    }

    pub fn is_tag(&self, id: TokenId) -> bool {
        TAG_TOKENS.contains(&id)
    }

    /// Token id for a digit value in 0..=9.
    pub fn digit(value: u32) -> TokenId {
        debug_assert!(value < 10);
        DIGIT_BASE + value as usize
    }

    /// Decodes a span of digit tokens into a non-negative integer.
    ///
    /// Returns `None` when the span is empty, contains a non-digit token, or
    /// overflows. Leading zeros are allowed.
    pub fn decode_digits(&self, span: &[TokenId]) -> Option<u64> {
        if span.is_empty() {
            return None;
        }
        let mut value: u64 = 0;
        for &t in span {
            if !self.is_digit(t) {
                return None;
            }
            value = value.checked_mul(10)?.checked_add(t as u64)?;
        }
        Some(value)
    }

    /// Token ids for the decimal digits of `value`, most significant first.
    pub fn encode_digits(&self, value: u64) -> Vec<TokenId> {
        let mut digits: Vec<TokenId> = Vec::new();
        let mut v = value;
        loop {
            digits.push(Self::digit((v % 10) as u32));
            v /= 10;
            if v == 0 {
                break;
            }
        }
        digits.reverse();
        digits
    }

    /// Human-readable rendering: token glyphs joined by single spaces.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.symbol(t).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// JSON manifest mapping symbol -> id, with ids stable across a run.
    pub fn manifest_json(&self) -> String {
        let map: BTreeMap<&str, usize> = self
            .symbols
            .iter()
            .enumerate()
            .map(|(id, s)| (s.as_str(), id))
            .collect();
        serde_json::to_string_pretty(&map).expect("vocab manifest serializes")
    }

    /// Hex SHA-256 of the canonical manifest. Policy checkpoints carry this
    /// hash and refuse to load against a different vocabulary.
    pub fn manifest_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.manifest_json().as_bytes());
        hex_string(&hasher.finalize())
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::standard()
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
