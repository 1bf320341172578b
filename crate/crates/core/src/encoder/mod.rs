//! Sentence-pair construction and the contextual encoder.
//!
//! Inputs are encoded as `[CLS] description [SEP] text [SEP]` with segment 0
//! covering the description span (including the leading special and the inner
//! separator) and segment 1 the text span (including the trailing separator).
//! The encoder output is the final-layer hidden state at the aggregate
//! (first) position.

pub mod tokenizer;
pub mod transformer;

use serde::{Deserialize, Serialize};

use crate::data::PolicyDescription;
use crate::error::{Error, Result};

pub use tokenizer::{HashTokenizer, Tokenizer, WordPieceTokenizer};
pub use transformer::TransformerEncoder;

/// Cap on description content tokens.
pub const MAX_DESC_TOKENS: usize = 50;
/// Cap on text content tokens.
pub const MAX_TEXT_TOKENS: usize = 100;
/// 1 aggregate special + 50 + separator + 100 + separator.
pub const MAX_PAIR_LEN: usize = 153;

/// A tokenized `[CLS] p [SEP] x [SEP]` input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub token_ids: Vec<usize>,
    /// 0 over the description span, 1 over the text span, 0 on padding.
    pub segment_ids: Vec<u8>,
    /// 1 on real tokens, 0 on padding.
    pub attention_mask: Vec<u8>,
}

impl TokenPair {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn content_len(&self) -> usize {
        self.attention_mask.iter().map(|&m| usize::from(m)).sum()
    }

    pub fn check_invariants(&self, tok: &dyn Tokenizer) -> Result<()> {
        let n = self.token_ids.len();
        if self.segment_ids.len() != n || self.attention_mask.len() != n {
            return Err(Error::Shape {
                context: "TokenPair".into(),
                expected: format!("{n} ids/segments/mask"),
                actual: format!("{}/{}", self.segment_ids.len(), self.attention_mask.len()),
            });
        }
        if n > MAX_PAIR_LEN {
            return Err(Error::Config(format!("pair length {n} exceeds {MAX_PAIR_LEN}")));
        }
        if self.token_ids.first() != Some(&tok.cls_id()) {
            return Err(Error::Config("pair must start with the aggregate token".into()));
        }
        let seps =
            self.token_ids.iter().filter(|&&id| id == tok.sep_id()).count();
        if seps != 2 {
            return Err(Error::Config(format!("pair must contain exactly 2 separators, got {seps}")));
        }
        for (i, &m) in self.attention_mask.iter().enumerate() {
            let is_pad = self.token_ids[i] == tok.pad_id();
            if (m == 1) == is_pad {
                return Err(Error::Config(format!("mask/padding mismatch at position {i}")));
            }
        }
        Ok(())
    }
}

/// Builds the token pair: description truncated to 50 content tokens, text to
/// 100, independently. No padding is applied; see [`pad_batch`].
pub fn build_pair(
    description: &PolicyDescription,
    text: &str,
    tok: &dyn Tokenizer,
) -> Result<TokenPair> {
    let mut desc_ids = tok.tokenize(&description.description);
    desc_ids.truncate(MAX_DESC_TOKENS);
    let mut text_ids = tok.tokenize(text);
    text_ids.truncate(MAX_TEXT_TOKENS);
    if text_ids.is_empty() {
        return Err(Error::EmptyInput(format!("text tokenizes to nothing: {text:?}")));
    }

    let mut token_ids = Vec::with_capacity(desc_ids.len() + text_ids.len() + 3);
    let mut segment_ids = Vec::new();
    token_ids.push(tok.cls_id());
    segment_ids.push(0);
    token_ids.extend(&desc_ids);
    segment_ids.extend(std::iter::repeat(0).take(desc_ids.len()));
    token_ids.push(tok.sep_id());
    segment_ids.push(0);
    token_ids.extend(&text_ids);
    segment_ids.extend(std::iter::repeat(1).take(text_ids.len()));
    token_ids.push(tok.sep_id());
    segment_ids.push(1);

    let attention_mask = vec![1; token_ids.len()];
    Ok(TokenPair { token_ids, segment_ids, attention_mask })
}

/// Pads every pair in the batch to the batch maximum length.
pub fn pad_batch(pairs: &mut [TokenPair], tok: &dyn Tokenizer) {
    let max = pairs.iter().map(TokenPair::len).max().unwrap_or(0);
    for p in pairs {
        while p.len() < max {
            p.token_ids.push(tok.pad_id());
            p.segment_ids.push(0);
            p.attention_mask.push(0);
        }
    }
}

/// Which encoder backs the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Pretrained uncased base transformer; weights supplied via checkpoint.
    Pretrained,
    /// Small randomly initialized transformer for tests and desk experiments.
    Tiny,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(text: &str) -> PolicyDescription {
        PolicyDescription { topic_id: "t0".into(), description: text.into() }
    }

    #[test]
    fn long_description_keeps_first_fifty() {
        let tok = HashTokenizer::default();
        let words: Vec<String> = (0..60).map(|i| format!("word{i}")).collect();
        let pair = build_pair(&desc(&words.join(" ")), "hello world", &tok).unwrap();
        // 1 CLS + 50 desc + SEP + 2 text + SEP
        assert_eq!(pair.len(), 55);
        let expected_first: Vec<usize> =
            tok.tokenize(&words.join(" ")).into_iter().take(50).collect();
        assert_eq!(&pair.token_ids[1..51], &expected_first[..]);
        pair.check_invariants(&tok).unwrap();
    }

    #[test]
    fn empty_description_single_token_text() {
        let tok = HashTokenizer::default();
        let pair = build_pair(&desc(""), "hello", &tok).unwrap();
        assert_eq!(pair.len(), 4);
        assert_eq!(pair.segment_ids, vec![0, 0, 1, 1]);
        pair.check_invariants(&tok).unwrap();
    }

    #[test]
    fn empty_text_is_an_error() {
        let tok = HashTokenizer::default();
        assert!(build_pair(&desc("some policy"), "...", &tok).is_err());
    }

    #[test]
    fn mask_counts_non_padding() {
        let tok = HashTokenizer::default();
        let mut pairs = vec![
            build_pair(&desc("a policy"), "short", &tok).unwrap(),
            build_pair(&desc("a policy"), "a much longer text with many words", &tok).unwrap(),
        ];
        let unpadded: Vec<usize> = pairs.iter().map(TokenPair::len).collect();
        pad_batch(&mut pairs, &tok);
        assert_eq!(pairs[0].len(), pairs[1].len());
        for (p, orig) in pairs.iter().zip(unpadded) {
            assert_eq!(p.content_len(), orig);
            p.check_invariants(&tok).unwrap();
        }
    }

    #[test]
    fn max_length_pair_within_cap() {
        let tok = HashTokenizer::default();
        let long_desc: Vec<String> = (0..80).map(|i| format!("d{i}")).collect();
        let long_text: Vec<String> = (0..200).map(|i| format!("x{i}")).collect();
        let pair =
            build_pair(&desc(&long_desc.join(" ")), &long_text.join(" "), &tok).unwrap();
        assert_eq!(pair.len(), MAX_PAIR_LEN);
    }

    #[test]
    fn truncation_is_deterministic() {
        let tok = HashTokenizer::default();
        let d = desc("the policy description body");
        let a = build_pair(&d, "same text twice", &tok).unwrap();
        let b = build_pair(&d, "same text twice", &tok).unwrap();
        assert_eq!(a, b);
    }
}
