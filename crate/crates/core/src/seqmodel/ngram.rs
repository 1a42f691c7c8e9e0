//! Interpolated back-off n-gram scorer.
//!
//! The model is trained on next-item targets: for every position `k` of a training
//! history it sees the context `[bos, ID_1..ID_{k-1}, eos]` followed by the digits of
//! `ID_k`, and counts each target digit under every context suffix up to
//! `order - 1` tokens. Prediction interpolates from the additively smoothed unigram
//! upwards with Witten-Bell weights `λ(h) = c(h) / (c(h) + T(h))`, where `T(h)` is
//! the number of distinct successors of `h`. Unseen contexts fall straight through
//! to the next lower order.
//!
//! `encode` pools per-token vectors obtained from a PPMI-weighted token
//! co-occurrence matrix, factorized by symmetric eigendecomposition.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{ModelError, Scorer, TokenSequence};
use crate::catalog::{Token, TokenLayout, BOS, EOS, NUM_SPECIAL_TOKENS};
use crate::matrix::{normalize_in_place, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramConfig {
    /// n-gram order; contexts hold at most `order - 1` tokens. `order = 1` is a unigram model.
    pub order: usize,
    /// Additive smoothing mass for the unigram base distribution.
    pub smoothing: f64,
    /// Width of the token co-occurrence embedding used by `encode`.
    pub embedding_dim: usize,
}

impl NGramConfig {
    /// Two full items of context for the given layout.
    pub fn for_layout(layout: &TokenLayout) -> Self {
        Self {
            order: 2 * layout.digits + 1,
            smoothing: 0.1,
            embedding_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ContextCounts {
    pub total: u64,
    /// `(token, count)` sorted by token.
    pub successors: Vec<(Token, u32)>,
}

impl ContextCounts {
    fn count(&self, token: Token) -> u32 {
        self.successors
            .binary_search_by_key(&token, |s| s.0)
            .map_or(0, |i| self.successors[i].1)
    }

    fn weight(&self) -> f64 {
        self.total as f64 / (self.total as f64 + self.successors.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct NGramScorer {
    pub(crate) config: NGramConfig,
    pub(crate) vocab_size: usize,
    pub(crate) unigram: Vec<u64>,
    pub(crate) contexts: HashMap<Box<[Token]>, ContextCounts>,
    pub(crate) token_vectors: Matrix,
    base: Vec<f64>,
}

impl PartialEq for NGramScorer {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab_size == other.vocab_size
            && self.unigram == other.unigram
            && self.contexts == other.contexts
            && self.token_vectors == other.token_vectors
    }
}

/// Fits the n-gram tables and the co-occurrence embedding on `sequences`.
pub fn fit_ngram(
    sequences: &[TokenSequence],
    layout: &TokenLayout,
    config: NGramConfig,
) -> Result<NGramScorer, ModelError> {
    if config.order == 0 {
        return Err(ModelError::InvalidConfig("order must be at least 1".into()));
    }
    if !(config.smoothing > 0.0 && config.smoothing.is_finite()) {
        return Err(ModelError::InvalidConfig("smoothing must be positive".into()));
    }
    if config.embedding_dim == 0 {
        return Err(ModelError::InvalidConfig("embedding_dim must be positive".into()));
    }
    if sequences.iter().all(|s| s.interior().is_empty()) {
        return Err(ModelError::EmptyCorpus);
    }
    for s in sequences {
        s.validate(layout)?;
    }

    let vocab_size = layout.vocab_size();
    let l = layout.digits;
    let mut unigram = vec![0u64; vocab_size];
    let mut raw: HashMap<Box<[Token]>, HashMap<Token, u32>> = HashMap::new();
    let mut context = Vec::new();
    for seq in sequences {
        let items: Vec<&[Token]> = seq.interior().chunks_exact(l).collect();
        for k in 0..items.len() {
            context.clear();
            context.push(BOS);
            // only the trailing `order - 1` tokens can ever be read back
            let keep_items = (config.order / l + 1).min(k);
            for item in &items[k - keep_items..k] {
                context.extend_from_slice(item);
            }
            context.push(EOS);
            for &target in items[k] {
                unigram[target as usize] += 1;
                let max_n = (config.order - 1).min(context.len());
                for n in 1..=max_n {
                    let suffix = &context[context.len() - n..];
                    *raw.entry(suffix.into())
                        .or_default()
                        .entry(target)
                        .or_insert(0) += 1;
                }
                context.push(target);
            }
        }
    }

    let contexts = raw
        .into_iter()
        .map(|(ctx, succ)| {
            let mut successors: Vec<(Token, u32)> = succ.into_iter().collect();
            successors.sort_unstable();
            let total = successors.iter().map(|s| s.1 as u64).sum();
            (ctx, ContextCounts { total, successors })
        })
        .collect();

    let token_vectors = cooccurrence_embedding(sequences, layout, config.embedding_dim);
    Ok(NGramScorer::from_tables(
        config,
        vocab_size,
        unigram,
        contexts,
        token_vectors,
    ))
}

/// Token vectors from the PPMI matrix of within-window co-occurrences (window = two items).
fn cooccurrence_embedding(sequences: &[TokenSequence], layout: &TokenLayout, dim: usize) -> Matrix {
    let v = layout.vocab_size();
    let window = 2 * layout.digits;
    let mut counts = DMatrix::<f64>::zeros(v, v);
    for seq in sequences {
        let toks = seq.interior();
        for i in 0..toks.len() {
            for j in (i + 1)..toks.len().min(i + window + 1) {
                let (a, b) = (toks[i] as usize, toks[j] as usize);
                counts[(a, b)] += 1.0;
                counts[(b, a)] += 1.0;
            }
        }
    }
    let row_sums: Vec<f64> = (0..v).map(|i| counts.row(i).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let mut ppmi = DMatrix::<f64>::zeros(v, v);
    if total > 0.0 {
        for a in 0..v {
            for b in 0..v {
                let c = counts[(a, b)];
                if c > 0.0 {
                    let pmi = (c * total / (row_sums[a] * row_sums[b])).ln();
                    ppmi[(a, b)] = pmi.max(0.0);
                }
            }
        }
    }
    let eig = SymmetricEigen::new(ppmi);
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut out = Matrix::zeros(v, dim);
    for (col, &k) in order.iter().take(dim).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        let scale = lambda.sqrt();
        // fix the sign so the largest-magnitude entry is positive
        let vec = eig.eigenvectors.column(k);
        let pivot = vec.iamax();
        let sign = if vec[pivot] < 0.0 { -1.0 } else { 1.0 };
        for row in 0..v {
            out.row_mut(row)[col] = (sign * vec[row] * scale) as f32;
        }
    }
    for special in 0..NUM_SPECIAL_TOKENS as usize {
        out.row_mut(special).iter_mut().for_each(|x| *x = 0.0);
    }
    out
}

impl NGramScorer {
    pub(crate) fn from_tables(
        config: NGramConfig,
        vocab_size: usize,
        unigram: Vec<u64>,
        contexts: HashMap<Box<[Token]>, ContextCounts>,
        token_vectors: Matrix,
    ) -> Self {
        let total: u64 = unigram.iter().sum();
        let denom = total as f64 + config.smoothing * vocab_size as f64;
        let base = unigram
            .iter()
            .map(|&c| (c as f64 + config.smoothing) / denom)
            .collect();
        Self {
            config,
            vocab_size,
            unigram,
            contexts,
            token_vectors,
            base,
        }
    }

    pub fn config(&self) -> &NGramConfig {
        &self.config
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn token_vectors(&self) -> &Matrix {
        &self.token_vectors
    }

    /// Context suffixes present in the model, shortest first.
    fn active_contexts<'a>(&'a self, context: &'a [Token]) -> impl Iterator<Item = &'a ContextCounts> + 'a {
        let max_n = (self.config.order - 1).min(context.len());
        (1..=max_n).map_while(move |n| self.contexts.get(&context[context.len() - n..]))
    }

    pub fn prob(&self, context: &[Token], token: Token) -> f64 {
        let mut p = self.base[token as usize];
        for counts in self.active_contexts(context) {
            let lambda = counts.weight();
            p = lambda * counts.count(token) as f64 / counts.total as f64 + (1.0 - lambda) * p;
        }
        p
    }

    pub fn probs(&self, context: &[Token]) -> Vec<f64> {
        let mut p = self.base.clone();
        for counts in self.active_contexts(context) {
            let lambda = counts.weight();
            p.iter_mut().for_each(|x| *x *= 1.0 - lambda);
            let scale = lambda / counts.total as f64;
            for &(tok, c) in &counts.successors {
                p[tok as usize] += scale * c as f64;
            }
        }
        p
    }
}

impl Scorer for NGramScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, context: &[Token]) -> Vec<f64> {
        self.probs(context).into_iter().map(f64::ln).collect()
    }

    fn log_prob(&self, context: &[Token], token: Token) -> f64 {
        self.prob(context, token).ln()
    }

    fn capabilities(&self) -> super::Capabilities {
        super::Capabilities {
            score: true,
            encode: true,
        }
    }

    /// Mean of the non-special token vectors, L2-normalized.
    fn encode(&self, tokens: &[Token]) -> Result<Vec<f32>, ModelError> {
        let dim = self.token_vectors.cols();
        let mut acc = vec![0f32; dim];
        let mut n = 0usize;
        for &t in tokens {
            if t < NUM_SPECIAL_TOKENS {
                continue;
            }
            if t as usize >= self.vocab_size {
                return Err(ModelError::MalformedSequence(format!(
                    "token {t} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
            acc.iter_mut()
                .zip(self.token_vectors.row(t as usize))
                .for_each(|(a, x)| *a += x);
            n += 1;
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f32);
        }
        normalize_in_place(&mut acc);
        Ok(acc)
    }
}
