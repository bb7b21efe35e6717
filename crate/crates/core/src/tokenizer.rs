//! WordPiece subword tokenization producing fixed-length token-id sequences
//! with attention masks and segment ids.
//!
//! Matching is greedy longest-prefix: at each position the longest vocabulary
//! entry wins, continuation pieces carry the `##` prefix, and a word with any
//! unmatched position collapses to the single unknown token.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

/// Words longer than this many characters map straight to the unknown token,
/// bounding worst-case matching cost.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("failed to read {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("vocabulary line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("vocabulary line {line}: empty token")]
    EmptyToken { line: usize },
    #[error("vocabulary is missing special token {token:?}")]
    MissingSpecial { token: &'static str },
}

/// Token-to-id map with dense ids `0..V` and the four special tokens resolved.
#[derive(Debug, Clone)]
pub struct WordPieceVocab {
    token_to_id: HashMap<String, u32>,
    pad_id: u32,
    unk_id: u32,
    cls_id: u32,
    sep_id: u32,
}

impl WordPieceVocab {
    /// One token per line, id = zero-based line index (the standard published
    /// format). Carriage returns are trimmed; truly empty lines are rejected.
    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut token_to_id = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let token = raw.strip_suffix('\r').unwrap_or(raw);
            if token.is_empty() {
                return Err(TokenizerError::EmptyToken { line: i + 1 });
            }
            if token_to_id.insert(token.to_string(), i as u32).is_some() {
                return Err(TokenizerError::DuplicateToken {
                    line: i + 1,
                    token: token.to_string(),
                });
            }
        }
        let lookup = |token: &'static str| {
            token_to_id
                .get(token)
                .copied()
                .ok_or(TokenizerError::MissingSpecial { token })
        };
        Ok(WordPieceVocab {
            pad_id: lookup(PAD_TOKEN)?,
            unk_id: lookup(UNK_TOKEN)?,
            cls_id: lookup(CLS_TOKEN)?,
            sep_id: lookup(SEP_TOKEN)?,
            token_to_id,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn len(&self) -> usize {
        self.token_to_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_to_id.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn cls_id(&self) -> u32 {
        self.cls_id
    }

    pub fn sep_id(&self) -> u32 {
        self.sep_id
    }
}

/// Fixed-length model input. `ids[0]` is always `[CLS]`, the mask is a prefix
/// of ones covering `true_length` positions, masked positions hold the pad id,
/// and `type_ids` are all zero for single-segment input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub type_ids: Vec<u8>,
    pub true_length: usize,
}

/// Greedy longest-prefix WordPiece split of one lowercase word. Continuation
/// pieces carry the `##` prefix; any unmatched position (or an over-long word)
/// collapses the whole word to `[UNK]`.
pub fn tokenize_word(word: &str, vocab: &WordPieceVocab) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
        return vec![UNK_TOKEN.to_string()];
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut matched: Option<String> = None;
        while end > start {
            let slice: String = chars[start..end].iter().collect();
            let candidate = if start == 0 {
                slice
            } else {
                format!("##{slice}")
            };
            if vocab.id(&candidate).is_some() {
                matched = Some(candidate);
                break;
            }
            end -= 1;
        }
        match matched {
            Some(piece) => {
                pieces.push(piece);
                start = end;
            }
            None => return vec![UNK_TOKEN.to_string()],
        }
    }
    pieces
}

/// Encodes preprocessed text as `[CLS]` + subwords + `[SEP]`, truncating
/// subwords from the tail so the total never exceeds `max_len`, then padding.
///
/// `max_len` must be at least 2 to hold the two specials.
pub fn encode(text: &str, vocab: &WordPieceVocab, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "max_len must be at least 2, got {max_len}");
    let mut piece_ids: Vec<u32> = Vec::new();
    for word in text.split_whitespace() {
        for piece in tokenize_word(word, vocab) {
            piece_ids.push(vocab.id(&piece).unwrap_or_else(|| vocab.unk_id()));
        }
    }
    piece_ids.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls_id());
    ids.extend_from_slice(&piece_ids);
    ids.push(vocab.sep_id());
    let true_length = ids.len();
    ids.resize(max_len, vocab.pad_id());
    let mut mask = vec![0u8; max_len];
    mask[..true_length].fill(1);
    TokenSequence {
        ids,
        mask,
        type_ids: vec![0; max_len],
        true_length,
    }
}
