//! Tokenizers feeding the pair encoder.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const UNK_ID: usize = 3;

pub trait Tokenizer: Send + Sync {
    /// Content token ids for a text; specials are added by the pair builder.
    fn tokenize(&self, text: &str) -> Vec<usize>;
    fn vocab_size(&self) -> usize;
    fn pad_id(&self) -> usize {
        PAD_ID
    }
    fn cls_id(&self) -> usize {
        CLS_ID
    }
    fn sep_id(&self) -> usize {
        SEP_ID
    }
}

/// Hashing tokenizer for the tiny test encoder: lowercases, splits on
/// non-alphanumeric characters, and buckets each word into a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct HashTokenizer {
    vocab_size: usize,
}

impl HashTokenizer {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size > UNK_ID + 1, "vocab must leave room for specials");
        HashTokenizer { vocab_size }
    }
}

impl Default for HashTokenizer {
    fn default() -> Self {
        HashTokenizer::new(512)
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

impl Tokenizer for HashTokenizer {
    fn tokenize(&self, text: &str) -> Vec<usize> {
        let lower = text.to_lowercase();
        lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| {
                let buckets = (self.vocab_size - UNK_ID - 1) as u64;
                UNK_ID + 1 + (fnv1a(w) % buckets) as usize
            })
            .collect()
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

/// Greedy longest-match subword tokenizer over a `vocab.txt`-style file
/// (one token per line, `##` prefix for continuations), as used by the
/// pretrained uncased base encoder.
#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    vocab: BTreeMap<String, usize>,
    pad: usize,
    cls: usize,
    sep: usize,
    unk: usize,
    max_word_chars: usize,
}

impl WordPieceTokenizer {
    pub fn from_vocab_file(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: BTreeMap<String, usize> =
            content.lines().enumerate().map(|(i, t)| (t.to_string(), i)).collect();
        let lookup = |name: &str| {
            vocab
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocab file missing special token {name}")))
        };
        Ok(WordPieceTokenizer {
            pad: lookup("[PAD]")?,
            cls: lookup("[CLS]")?,
            sep: lookup("[SEP]")?,
            unk: lookup("[UNK]")?,
            vocab,
            max_word_chars: 100,
        })
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<usize>) {
        if word.chars().count() > self.max_word_chars {
            out.push(self.unk);
            return;
        }
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        let mut pieces = Vec::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let piece: String = chars[start..end].iter().collect();
                let candidate =
                    if start > 0 { format!("##{piece}") } else { piece };
                if let Some(&id) = self.vocab.get(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(self.unk);
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

impl Tokenizer for WordPieceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<usize> {
        let lower = text.to_lowercase();
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<usize>| {
            if !word.is_empty() {
                self.word_pieces(word, out);
                word.clear();
            }
        };
        for c in lower.chars() {
            if c.is_whitespace() {
                flush(&mut word, &mut out);
            } else if c.is_ascii_punctuation() {
                flush(&mut word, &mut out);
                let p = c.to_string();
                match self.vocab.get(&p) {
                    Some(&id) => out.push(id),
                    None => out.push(self.unk),
                }
            } else {
                word.push(c);
            }
        }
        flush(&mut word, &mut out);
        out
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn pad_id(&self) -> usize {
        self.pad
    }

    fn cls_id(&self) -> usize {
        self.cls
    }

    fn sep_id(&self) -> usize {
        self.sep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn hash_tokenizer_is_deterministic_and_in_range() {
        let tok = HashTokenizer::default();
        let a = tok.tokenize("Stay Home, save lives!");
        let b = tok.tokenize("stay home save lives");
        assert_eq!(a, b);
        assert!(a.iter().all(|&id| id > UNK_ID && id < tok.vocab_size()));
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn hash_tokenizer_empty_text() {
        let tok = HashTokenizer::default();
        assert!(tok.tokenize("  ...  ").is_empty());
    }

    #[test]
    fn wordpiece_greedy_matching() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"[PAD]\n[UNK]\n[CLS]\n[SEP]\nun\n##aff\n##able\naffable\n,\n").unwrap();
        let tok = WordPieceTokenizer::from_vocab_file(f.path()).unwrap();
        // "unaffable" -> un ##aff ##able
        assert_eq!(tok.tokenize("unaffable"), vec![4, 5, 6]);
        assert_eq!(tok.tokenize("affable, affable"), vec![7, 8, 7]);
        assert_eq!(tok.tokenize("xyz"), vec![1]);
    }
}
