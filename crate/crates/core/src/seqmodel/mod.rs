//! Autoregressive scorer contract, the n-gram surrogate model and beam search.

mod beam;
mod checkpoint;
mod fixed;
mod ngram;

use thiserror::Error;

pub use beam::{beam_search, Beam, BeamDecoder};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointPreamble};
pub use fixed::{FnScorer, UniformScorer};
pub use ngram::{fit_ngram, NGramConfig, NGramScorer};

use crate::catalog::{Catalog, Token, TokenLayout, BOS, EOS};

/// Histories are truncated to this many most recent items before tokenization.
pub const MAX_HISTORY_ITEMS: usize = 20;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("scorer does not support {0}")]
    Unsupported(&'static str),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed token sequence: {0}")]
    MalformedSequence(String),
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub score: bool,
    pub encode: bool,
}

/// Next-token model over the shared token vocabulary.
///
/// `log_probs` must return the log of a proper distribution over all
/// `vocab_size()` tokens. Implementations are immutable and shared across threads.
pub trait Scorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn log_probs(&self, context: &[Token]) -> Vec<f64>;

    fn log_prob(&self, context: &[Token], token: Token) -> f64 {
        self.log_probs(context)[token as usize]
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            score: true,
            encode: false,
        }
    }

    /// Pooled representation of a token sequence.
    fn encode(&self, _tokens: &[Token]) -> Result<Vec<f32>, ModelError> {
        Err(ModelError::Unsupported("encode"))
    }
}

/// `[bos, ID_1, .., ID_w, eos]`: a chronological history in token space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<Token>,
}

impl TokenSequence {
    /// Tokenizes the most recent [`MAX_HISTORY_ITEMS`] items of `history`.
    pub fn from_history(catalog: &Catalog, history: &[usize]) -> Self {
        let start = history.len().saturating_sub(MAX_HISTORY_ITEMS);
        Self::from_digit_rows(
            catalog.layout(),
            history[start..]
                .iter()
                .map(|&i| catalog.semantic_id(i).digits()),
        )
    }

    pub fn from_digit_rows<'a, I>(layout: &TokenLayout, items: I) -> Self
    where
        I: IntoIterator<Item = &'a [u16]>,
    {
        let mut tokens = vec![BOS];
        for digits in items {
            tokens.extend(layout.tokens_of(digits));
        }
        tokens.push(EOS);
        Self { tokens }
    }

    /// Wraps raw tokens after checking the framing and level discipline.
    pub fn from_tokens(tokens: Vec<Token>, layout: &TokenLayout) -> Result<Self, ModelError> {
        let seq = Self { tokens };
        seq.validate(layout)?;
        Ok(seq)
    }

    pub fn validate(&self, layout: &TokenLayout) -> Result<(), ModelError> {
        let t = &self.tokens;
        if t.len() < 2 || t[0] != BOS || t[t.len() - 1] != EOS {
            return Err(ModelError::MalformedSequence(
                "sequence must start with bos and end with eos".into(),
            ));
        }
        let interior = &t[1..t.len() - 1];
        if interior.len() % layout.digits != 0 {
            return Err(ModelError::MalformedSequence(format!(
                "interior length {} is not a multiple of {}",
                interior.len(),
                layout.digits
            )));
        }
        for (pos, &tok) in interior.iter().enumerate() {
            if layout.level_of(tok) != Some(pos % layout.digits) {
                return Err(ModelError::MalformedSequence(format!(
                    "token {tok} at interior position {pos} breaks level order"
                )));
            }
        }
        Ok(())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn interior(&self) -> &[Token] {
        &self.tokens[1..self.tokens.len() - 1]
    }

    pub fn num_items(&self, layout: &TokenLayout) -> usize {
        self.interior().len() / layout.digits
    }
}

/// Per-digit log-probabilities of `candidate` continuing `x`:
/// entry `i` is `log P(candidate[i] | x ++ candidate[..i])`.
pub fn chain_logprobs(scorer: &dyn Scorer, x: &TokenSequence, candidate: &[Token]) -> Vec<f64> {
    let mut context = Vec::with_capacity(x.tokens().len() + candidate.len());
    context.extend_from_slice(x.tokens());
    let mut out = Vec::with_capacity(candidate.len());
    for &tok in candidate {
        out.push(scorer.log_prob(&context, tok));
        context.push(tok);
    }
    out
}

pub fn encode_sequence(scorer: &dyn Scorer, sequence: &[Token]) -> Result<Vec<f32>, ModelError> {
    if !scorer.capabilities().encode {
        return Err(ModelError::Unsupported("encode"));
    }
    scorer.encode(sequence)
}
