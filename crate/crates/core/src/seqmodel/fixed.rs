//! Closed-form scorers for fixtures and limit cases.

use super::Scorer;
use crate::catalog::Token;

/// Uniform next-token distribution.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    vocab_size: usize,
}

impl UniformScorer {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }
}

impl Scorer for UniformScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, _context: &[Token]) -> Vec<f64> {
        vec![-(self.vocab_size as f64).ln(); self.vocab_size]
    }
}

/// Scorer backed by an arbitrary context -> log-distribution function.
pub struct FnScorer<F> {
    vocab_size: usize,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&[Token]) -> Vec<f64> + Send + Sync,
{
    pub fn new(vocab_size: usize, f: F) -> Self {
        Self { vocab_size, f }
    }
}

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&[Token]) -> Vec<f64> + Send + Sync,
{
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, context: &[Token]) -> Vec<f64> {
        let out = (self.f)(context);
        debug_assert_eq!(out.len(), self.vocab_size);
        out
    }
}
