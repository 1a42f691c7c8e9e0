use std::cmp::Ordering;
use std::ops::Range;

use super::{Scorer, TokenSequence};
use crate::catalog::{NodeId, PrefixTrie, Token, TokenLayout, ROOT};

/// A partial semantic-ID path and its summed log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub tokens: Vec<Token>,
    pub score: f64,
}

struct Constraint<'a> {
    trie: &'a PrefixTrie,
    layout: TokenLayout,
}

/// Step-wise level-masked beam search.
///
/// Each step extends every live beam by the tokens allowed at that step and keeps
/// the `width` best extensions. Equal scores are ordered by the lexicographically
/// smaller token sequence. With a trie constraint only paths with at least one
/// item beneath them survive.
pub struct BeamDecoder<'a> {
    scorer: &'a dyn Scorer,
    context: Vec<Token>,
    width: usize,
    level_mask: Vec<Range<Token>>,
    constraint: Option<Constraint<'a>>,
    beams: Vec<(Beam, NodeId)>,
    steps: usize,
}

impl<'a> BeamDecoder<'a> {
    pub fn new(
        scorer: &'a dyn Scorer,
        x: &TokenSequence,
        width: usize,
        level_mask: Vec<Range<Token>>,
    ) -> Self {
        assert!(width >= 1, "beam width must be at least 1");
        Self {
            scorer,
            context: x.tokens().to_vec(),
            width,
            level_mask,
            constraint: None,
            beams: vec![(
                Beam {
                    tokens: Vec::new(),
                    score: 0.0,
                },
                ROOT,
            )],
            steps: 0,
        }
    }

    /// Restricts decoding to digit paths present in `trie`.
    pub fn constrained(mut self, trie: &'a PrefixTrie, layout: TokenLayout) -> Self {
        self.constraint = Some(Constraint { trie, layout });
        if trie.is_empty() {
            self.beams.clear();
        }
        self
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn max_steps(&self) -> usize {
        self.level_mask.len()
    }

    pub fn is_finished(&self) -> bool {
        self.steps >= self.level_mask.len() || self.beams.is_empty()
    }

    pub fn beams(&self) -> impl ExactSizeIterator<Item = &Beam> + '_ {
        self.beams.iter().map(|b| &b.0)
    }

    /// Advances one decoding step. Returns `false` if no step could be taken.
    pub fn step(&mut self) -> bool {
        if self.is_finished() {
            return false;
        }
        let step = self.steps;
        let mut candidates: Vec<(usize, Token, f64, NodeId)> = Vec::new();
        let mut context = self.context.clone();
        let base_len = context.len();
        for (bi, (beam, node)) in self.beams.iter().enumerate() {
            context.truncate(base_len);
            context.extend_from_slice(&beam.tokens);
            match &self.constraint {
                None => {
                    let lps = self.scorer.log_probs(&context);
                    for tok in self.level_mask[step].clone() {
                        candidates.push((bi, tok, beam.score + lps[tok as usize], *node));
                    }
                }
                Some(c) => {
                    for &(digit, child) in c.trie.children(*node) {
                        let tok = c.layout.token(step, digit);
                        if !self.level_mask[step].contains(&tok) {
                            continue;
                        }
                        let lp = self.scorer.log_prob(&context, tok);
                        candidates.push((bi, tok, beam.score + lp, child));
                    }
                }
            }
        }
        let beams = &self.beams;
        let cmp = |a: &(usize, Token, f64, NodeId), b: &(usize, Token, f64, NodeId)| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then_with(|| beams[a.0].0.tokens.cmp(&beams[b.0].0.tokens))
                .then(a.1.cmp(&b.1))
        };
        if candidates.len() > self.width {
            candidates.select_nth_unstable_by(self.width - 1, cmp);
            candidates.truncate(self.width);
        }
        candidates.sort_by(cmp);
        let next = candidates
            .into_iter()
            .map(|(bi, tok, score, node)| {
                let mut tokens = Vec::with_capacity(step + 1);
                tokens.extend_from_slice(&self.beams[bi].0.tokens);
                tokens.push(tok);
                (Beam { tokens, score }, node)
            })
            .collect();
        self.beams = next;
        self.steps += 1;
        true
    }

    pub fn into_beams(self) -> Vec<Beam> {
        self.beams.into_iter().map(|b| b.0).collect()
    }
}

/// Runs `steps` decoding steps and returns the surviving beams, best first.
pub fn beam_search(
    scorer: &dyn Scorer,
    x: &TokenSequence,
    width: usize,
    steps: usize,
    level_mask: &[Range<Token>],
    constraint: Option<(&PrefixTrie, TokenLayout)>,
) -> Vec<Beam> {
    let mask = level_mask[..steps.min(level_mask.len())].to_vec();
    let mut decoder = BeamDecoder::new(scorer, x, width, mask);
    if let Some((trie, layout)) = constraint {
        decoder = decoder.constrained(trie, layout);
    }
    while decoder.step() {}
    decoder.into_beams()
}
