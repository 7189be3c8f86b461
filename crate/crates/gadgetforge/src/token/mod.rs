//! Vocabularies and fixed-length id encoding.
//!
//! Two tokenizer families share one [`Vocabulary`] type: word-level
//! (whitespace/punctuation split, [`build_word_vocab`]) and byte-level BPE
//! ([`train_bpe`]), which segments raw bytes and therefore never needs UNK.
//! [`encode`] wraps either into `BOS + ids + EOS`, truncated and padded to a
//! fixed length with a matching attention mask.

mod bpe;
mod word;

use std::collections::HashMap;

use thiserror::Error;

pub use bpe::{bpe_segment, train_bpe};
pub use word::{build_word_vocab, word_split};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

#[derive(Debug, Error)]
pub enum TokenError {
    #[error("malformed vocabulary line {line}: {reason}")]
    MalformedVocab { line: usize, reason: String },
    #[error("malformed merges line {line}: {reason}")]
    MalformedMerges { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabKind {
    Word,
    Bpe,
}

/// Token table with dense ids; specials always occupy ids 0–3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub kind: VocabKind,
    tokens: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, u32>,
    /// BPE merge rules in application order; empty for word vocabularies.
    pub merges: Vec<(Vec<u8>, Vec<u8>)>,
}

impl Vocabulary {
    pub(crate) fn with_specials(kind: VocabKind) -> Self {
        let mut v = Vocabulary {
            kind,
            tokens: Vec::new(),
            index: HashMap::new(),
            merges: Vec::new(),
        };
        for s in SPECIAL_TOKENS {
            v.push(s.as_bytes().to_vec());
        }
        v
    }

    /// Insert a token, returning its id; existing tokens keep their id.
    pub(crate) fn push(&mut self, token: Vec<u8>) -> u32 {
        if let Some(&id) = self.index.get(&token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.clone());
        self.index.insert(token, id);
        id
    }

    pub fn id_of(&self, token: &[u8]) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Concatenate the byte content of non-special ids. For byte-level BPE
    /// this inverts segmentation exactly.
    pub fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        for &id in ids {
            if id >= SPECIAL_TOKENS.len() as u32 {
                if let Some(tok) = self.token(id) {
                    out.extend_from_slice(tok);
                }
            }
        }
        out
    }

    /// Serialize as `token<TAB>id` lines, ids ascending.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.tokens.iter().enumerate() {
            out.push_str(&escape_bytes(tok, false));
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, kind: VocabKind) -> Result<Self, TokenError> {
        let mut entries: Vec<(Vec<u8>, u32)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            if raw.is_empty() {
                continue;
            }
            let (tok, id) = raw.rsplit_once('\t').ok_or(TokenError::MalformedVocab {
                line: idx + 1,
                reason: "expected `token<TAB>id`".into(),
            })?;
            let id: u32 = id.parse().map_err(|_| TokenError::MalformedVocab {
                line: idx + 1,
                reason: format!("bad id `{id}`"),
            })?;
            let bytes = unescape_bytes(tok).ok_or(TokenError::MalformedVocab {
                line: idx + 1,
                reason: "bad escape sequence".into(),
            })?;
            entries.push((bytes, id));
        }
        entries.sort_by_key(|&(_, id)| id);
        let mut v = Vocabulary {
            kind,
            tokens: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
            merges: Vec::new(),
        };
        for (pos, (bytes, id)) in entries.into_iter().enumerate() {
            if id as usize != pos {
                return Err(TokenError::MalformedVocab {
                    line: 0,
                    reason: format!("ids not dense at {id}"),
                });
            }
            v.push(bytes);
        }
        Ok(v)
    }

    /// Serialize merges as `left right` lines, escaped so the space
    /// separator is unambiguous.
    pub fn merges_to_text(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(&escape_bytes(l, true));
            out.push(' ');
            out.push_str(&escape_bytes(r, true));
            out.push('\n');
        }
        out
    }

    pub fn merges_from_text(&mut self, text: &str) -> Result<(), TokenError> {
        let mut merges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            if raw.is_empty() {
                continue;
            }
            let (l, r) = raw.split_once(' ').ok_or(TokenError::MalformedMerges {
                line: idx + 1,
                reason: "expected `left right`".into(),
            })?;
            let bad = |which: &str| TokenError::MalformedMerges {
                line: idx + 1,
                reason: format!("bad escape in {which}"),
            };
            merges.push((
                unescape_bytes(l).ok_or_else(|| bad("left"))?,
                unescape_bytes(r).ok_or_else(|| bad("right"))?,
            ));
        }
        self.merges = merges;
        Ok(())
    }
}

/// Printable ASCII passes through; tab/newline/backslash/space (when asked)
/// and all other bytes become escapes, so serialized files are line-safe.
fn escape_bytes(bytes: &[u8], escape_space: bool) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'\t' => out.push_str("\\t"),
            b'\n' => out.push_str("\\n"),
            b'\r' => out.push_str("\\r"),
            b' ' if escape_space => out.push_str("\\x20"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

fn unescape_bytes(text: &str) -> Option<Vec<u8>> {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        match bytes.get(i + 1)? {
            b'\\' => {
                out.push(b'\\');
                i += 2;
            }
            b't' => {
                out.push(b'\t');
                i += 2;
            }
            b'n' => {
                out.push(b'\n');
                i += 2;
            }
            b'r' => {
                out.push(b'\r');
                i += 2;
            }
            b'x' => {
                let hex = text.get(i + 2..i + 4)?;
                out.push(u8::from_str_radix(hex, 16).ok()?);
                i += 4;
            }
            _ => return None,
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Truncation {
    /// Keep the start of the sequence (default).
    #[default]
    Head,
    /// Keep the end — useful when the API call sits at the gadget's tail.
    Tail,
}

/// Fixed-length id sequence plus its attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// 1 exactly where `ids` is not PAD.
    pub mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-PAD positions.
    pub fn content_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Encode text as `BOS + ids + EOS`, truncated to `max_len` (EOS forced at
/// the final kept position) and padded with PAD.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize, trunc: Truncation) -> TokenSequence {
    assert!(max_len >= 2, "max_len must leave room for BOS and EOS");
    let content: Vec<u32> = match vocab.kind {
        VocabKind::Word => word_split(text)
            .into_iter()
            .map(|tok| vocab.id_of(tok.as_bytes()).unwrap_or(UNK))
            .collect(),
        VocabKind::Bpe => bpe_segment(text.as_bytes(), &vocab.merges)
            .into_iter()
            .map(|tok| vocab.id_of(&tok).unwrap_or(UNK))
            .collect(),
    };

    let budget = max_len - 2;
    let kept: &[u32] = if content.len() <= budget {
        &content
    } else {
        match trunc {
            Truncation::Head => &content[..budget],
            Truncation::Tail => &content[content.len() - budget..],
        }
    };

    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend_from_slice(kept);
    ids.push(EOS);
    ids.resize(max_len, PAD);
    let mask = ids.iter().map(|&id| u8::from(id != PAD)).collect();
    TokenSequence { ids, mask }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word_vocab(texts: &[&str]) -> Vocabulary {
        build_word_vocab(texts.iter().copied(), 1000, 1)
    }

    #[test]
    fn empty_text_encodes_to_frame_only() {
        let v = word_vocab(&["x"]);
        let seq = encode("", &v, 6, Truncation::Head);
        assert_eq!(seq.ids, vec![BOS, EOS, PAD, PAD, PAD, PAD]);
        assert_eq!(seq.mask, vec![1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn exact_fit_has_no_padding() {
        let v = word_vocab(&["a b c d"]);
        let seq = encode("a b c d", &v, 6, Truncation::Head);
        assert_eq!(seq.len(), 6);
        assert!(seq.mask.iter().all(|&m| m == 1));
        assert_eq!(seq.ids[0], BOS);
        assert_eq!(seq.ids[5], EOS);
    }

    #[test]
    fn truncation_forces_trailing_eos() {
        let v = word_vocab(&["a b c d e f g h"]);
        let seq = encode("a b c d e f g h", &v, 5, Truncation::Head);
        assert_eq!(seq.len(), 5);
        assert_eq!(seq.ids[0], BOS);
        assert_eq!(seq.ids[4], EOS);
        assert!(seq.mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn tail_truncation_keeps_the_end() {
        let v = word_vocab(&["a b c d e"]);
        let head = encode("a b c d e", &v, 4, Truncation::Head);
        let tail = encode("a b c d e", &v, 4, Truncation::Tail);
        assert_eq!(head.ids[1], v.id_of(b"a").unwrap());
        assert_eq!(tail.ids[1], v.id_of(b"d").unwrap());
        assert_eq!(tail.ids[2], v.id_of(b"e").unwrap());
    }

    #[test]
    fn encode_length_is_always_max_len() {
        let v = word_vocab(&["x y z"]);
        for text in ["", "x", "x y z x y z x y z x y z"] {
            for max_len in [2, 3, 8, 32] {
                let seq = encode(text, &v, max_len, Truncation::Head);
                assert_eq!(seq.len(), max_len);
                for (id, m) in seq.ids.iter().zip(&seq.mask) {
                    assert_eq!(*m == 1, *id != PAD);
                }
            }
        }
    }

    #[test]
    fn specials_occupy_low_ids() {
        let v = word_vocab(&["x"]);
        assert_eq!(v.id_of(b"<pad>"), Some(PAD));
        assert_eq!(v.id_of(b"<unk>"), Some(UNK));
        assert_eq!(v.id_of(b"<bos>"), Some(BOS));
        assert_eq!(v.id_of(b"<eos>"), Some(EOS));
    }

    #[test]
    fn vocab_serialization_round_trips_byte_identically() {
        let mut v = Vocabulary::with_specials(VocabKind::Bpe);
        v.push(b"plain".to_vec());
        v.push(b"has\ttab".to_vec());
        v.push(b"has\nnewline".to_vec());
        v.push(vec![0xff, 0x00, b'x']);
        v.push(b"back\\slash".to_vec());
        let text = v.to_text();
        let loaded = Vocabulary::from_text(&text, VocabKind::Bpe).unwrap();
        assert_eq!(loaded.to_text(), text);
        assert_eq!(loaded.id_of(b"has\ttab"), v.id_of(b"has\ttab"));
        assert_eq!(loaded.token(7), Some(&[0xff, 0x00, b'x'][..]));
    }

    #[test]
    fn merges_serialization_round_trips() {
        let mut v = Vocabulary::with_specials(VocabKind::Bpe);
        v.merges = vec![
            (b"a".to_vec(), b"b".to_vec()),
            (b" ".to_vec(), b"sp ace".to_vec()),
            (vec![0x80], vec![0x81]),
        ];
        let text = v.merges_to_text();
        let mut loaded = Vocabulary::with_specials(VocabKind::Bpe);
        loaded.merges_from_text(&text).unwrap();
        assert_eq!(loaded.merges, v.merges);
        assert_eq!(loaded.merges_to_text(), text);
    }

    #[test]
    fn malformed_vocab_is_rejected() {
        assert!(Vocabulary::from_text("token-without-id\n", VocabKind::Word).is_err());
        assert!(Vocabulary::from_text("tok\tnope\n", VocabKind::Word).is_err());
    }
}
