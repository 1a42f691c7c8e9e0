use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Token code in the shared sequence-model vocabulary.
pub type Token = u32;

pub const BOS: Token = 0;
pub const EOS: Token = 1;
/// Size of the reserved low range holding special tokens.
pub const NUM_SPECIAL_TOKENS: u32 = 2;

/// Maps per-level semantic-ID digits onto disjoint token ranges.
///
/// Level `i` (0-based) occupies `[2 + i * codebook_size, 2 + i * codebook_size + size_i)`
/// where `size_i` is `codebook_size` for the semantic levels and `id_vocab` for the
/// trailing identification level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    /// Total digits per semantic ID, identification digit included.
    pub digits: usize,
    pub codebook_size: usize,
    pub id_vocab: usize,
}

impl Default for TokenLayout {
    fn default() -> Self {
        Self {
            digits: 4,
            codebook_size: 32,
            id_vocab: 32,
        }
    }
}

impl TokenLayout {
    pub fn new(digits: usize, codebook_size: usize, id_vocab: usize) -> Self {
        assert!(digits >= 2, "a semantic ID needs at least one semantic and one id digit");
        assert!(codebook_size >= 1 && id_vocab >= 1);
        Self {
            digits,
            codebook_size,
            id_vocab,
        }
    }

    /// Number of semantic (embedding-derived) levels, `digits - 1`.
    pub fn semantic_levels(&self) -> usize {
        self.digits - 1
    }

    pub fn level_size(&self, level: usize) -> usize {
        debug_assert!(level < self.digits);
        if level + 1 == self.digits {
            self.id_vocab
        } else {
            self.codebook_size
        }
    }

    pub fn level_offset(&self, level: usize) -> Token {
        NUM_SPECIAL_TOKENS + (level * self.codebook_size) as Token
    }

    pub fn level_range(&self, level: usize) -> Range<Token> {
        let start = self.level_offset(level);
        start..start + self.level_size(level) as Token
    }

    /// Allowed-token ranges for each decoding step.
    pub fn level_mask(&self) -> Vec<Range<Token>> {
        (0..self.digits).map(|l| self.level_range(l)).collect()
    }

    pub fn vocab_size(&self) -> usize {
        NUM_SPECIAL_TOKENS as usize + self.semantic_levels() * self.codebook_size + self.id_vocab
    }

    pub fn token(&self, level: usize, digit: u16) -> Token {
        debug_assert!((digit as usize) < self.level_size(level));
        self.level_offset(level) + digit as Token
    }

    /// Inverse of [`TokenLayout::token`]; `None` when the token is not a level-`level` code.
    pub fn digit(&self, level: usize, token: Token) -> Option<u16> {
        let range = self.level_range(level);
        range.contains(&token).then(|| (token - range.start) as u16)
    }

    /// Level that owns `token`, or `None` for specials and out-of-vocabulary codes.
    pub fn level_of(&self, token: Token) -> Option<usize> {
        (0..self.digits).find(|&l| self.level_range(l).contains(&token))
    }

    pub fn tokens_of(&self, digits: &[u16]) -> Vec<Token> {
        digits
            .iter()
            .enumerate()
            .map(|(level, &d)| self.token(level, d))
            .collect()
    }

    /// Decodes a token path back to digits, failing on any level violation.
    pub fn digits_of(&self, tokens: &[Token]) -> Option<Vec<u16>> {
        tokens
            .iter()
            .enumerate()
            .map(|(level, &t)| {
                if level >= self.digits {
                    None
                } else {
                    self.digit(level, t)
                }
            })
            .collect()
    }
}
