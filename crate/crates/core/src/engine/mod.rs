//! Draft-verify recommendation loop and its comparison baselines.
//!
//! One [`Engine::recommend`] call runs at most `l` iterations (`l` = digits per
//! semantic ID). Iteration `j` drafts up to `δ` candidates (filtered to the current
//! beam prefixes from `j = 2` on), verifies them by mean per-digit log-likelihood,
//! and exits as soon as `K` candidates have been accepted. Otherwise the beam
//! search advances one level. If the loop runs out, items parsed from the final
//! beams fill the list after the accepted ones.

mod baselines;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::drafter::{DraftIndex, PrefixSet};
use crate::seqmodel::{chain_logprobs, BeamDecoder, ModelError, Scorer, TokenSequence};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("empty history")]
    EmptyHistory,
    #[error("item index {0} outside catalog")]
    UnknownItem(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecGRConfig {
    /// Output size `K`.
    pub k: usize,
    /// Draft batch size `δ`.
    pub draft_size: usize,
    /// Acceptance threshold `γ` on the mean per-digit log-probability.
    pub threshold: f64,
    /// Beam width `β`, also the size of the guiding prefix set.
    pub beam_width: usize,
    /// Restricts drafting and beam fill to these items.
    #[serde(default)]
    pub subset: Option<Vec<usize>>,
    /// Defaults to the number of semantic-ID digits.
    #[serde(default)]
    pub max_iterations: Option<usize>,
    /// Filter later draft batches by the current beam prefixes.
    #[serde(default = "default_true")]
    pub guided: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SpecGRConfig {
    fn default() -> Self {
        Self {
            k: 10,
            draft_size: 50,
            threshold: -1.6,
            beam_width: 50,
            subset: None,
            max_iterations: None,
            guided: true,
        }
    }
}

impl SpecGRConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.k == 0 || self.draft_size == 0 || self.beam_width == 0 {
            return Err(EngineError::InvalidConfig(
                "k, draft_size and beam_width must be at least 1".into(),
            ));
        }
        if self.threshold.is_nan() {
            return Err(EngineError::InvalidConfig("threshold is NaN".into()));
        }
        if self.max_iterations == Some(0) {
            return Err(EngineError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// A drafted item together with its verification outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedCandidate {
    pub item: usize,
    pub score: f64,
    pub accepted: bool,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Drafted and accepted by the verifier; scored by mean log-probability.
    Accepted,
    /// Parsed from a beam sequence; scored by the summed beam log-probability.
    BeamFill,
    /// Unseen item mixed in by drafter similarity.
    UnseenMix,
    /// Exhaustively scored subset member; scored by mean log-probability.
    Scored,
    /// Subset-restricted request only: a drafted candidate that failed verification,
    /// used after beam fill when the list is still short.
    RejectedFill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationEntry {
    pub item: usize,
    pub score: f64,
    pub provenance: Provenance,
}

/// What happened in one draft-verify iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Beam prefixes the batch was filtered by, if guided.
    pub guide: Option<Vec<Vec<u16>>>,
    pub candidates: Vec<VerifiedCandidate>,
}

impl IterationTrace {
    pub fn accepted(&self) -> usize {
        self.candidates.iter().filter(|c| c.accepted).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub entries: Vec<RecommendationEntry>,
    pub iterations_used: usize,
    pub decode_steps_used: usize,
    /// Set when fewer than `K` items could be produced.
    pub short: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<IterationTrace>,
}

impl RecommendationList {
    pub fn items(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.item).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mean per-digit log-probability of `item` given `x`.
///
/// Items seen in training average over all `l` digits; unseen items average over
/// the first `l - 1` only, leaving out the identification digit.
pub fn verification_score(
    scorer: &dyn Scorer,
    catalog: &Catalog,
    x: &TokenSequence,
    item: usize,
) -> f64 {
    let mut tokens = catalog.tokens(item);
    if !catalog.is_seen(item) {
        tokens.pop();
    }
    let lps = chain_logprobs(scorer, x, &tokens);
    lps.iter().sum::<f64>() / lps.len() as f64
}

/// Scores a batch of candidates and flags those strictly above `threshold`.
pub fn verify(
    scorer: &dyn Scorer,
    catalog: &Catalog,
    x: &TokenSequence,
    candidates: &[usize],
    threshold: f64,
    iteration: usize,
) -> Vec<VerifiedCandidate> {
    candidates
        .iter()
        .map(|&item| {
            let score = verification_score(scorer, catalog, x, item);
            VerifiedCandidate {
                item,
                score,
                accepted: score > threshold,
                iteration,
            }
        })
        .collect()
}

fn by_score_then_index(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Shared, immutable handles needed to answer recommendation requests.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    scorer: &'a dyn Scorer,
    catalog: &'a Catalog,
    index: &'a DraftIndex,
}

impl<'a> Engine<'a> {
    pub fn new(scorer: &'a dyn Scorer, catalog: &'a Catalog, index: &'a DraftIndex) -> Self {
        Self {
            scorer,
            catalog,
            index,
        }
    }

    pub fn scorer(&self) -> &'a dyn Scorer {
        self.scorer
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.catalog
    }

    pub fn index(&self) -> &'a DraftIndex {
        self.index
    }

    fn check_history(&self, history: &[usize]) -> Result<TokenSequence, EngineError> {
        if history.is_empty() {
            return Err(EngineError::EmptyHistory);
        }
        if let Some(&bad) = history.iter().find(|&&i| i >= self.catalog.len()) {
            return Err(EngineError::UnknownItem(bad));
        }
        Ok(TokenSequence::from_history(self.catalog, history))
    }

    fn check_items(&self, items: &[usize]) -> Result<(), EngineError> {
        match items.iter().find(|&&i| i >= self.catalog.len()) {
            Some(&bad) => Err(EngineError::UnknownItem(bad)),
            None => Ok(()),
        }
    }

    /// Runs the draft-verify loop.
    pub fn recommend(
        &self,
        history: &[usize],
        config: &SpecGRConfig,
    ) -> Result<RecommendationList, EngineError> {
        config.validate()?;
        let x = self.check_history(history)?;
        let subset: Option<HashSet<usize>> = match &config.subset {
            Some(items) => {
                self.check_items(items)?;
                Some(items.iter().copied().collect())
            }
            None => None,
        };
        let layout = *self.catalog.layout();
        let query = self.index.query(self.catalog, Some(self.scorer), history)?;
        let mut stream = self.index.open_stream(
            self.catalog,
            &query,
            &HashSet::new(),
            config.subset.as_deref(),
        );
        let mut decoder = BeamDecoder::new(self.scorer, &x, config.beam_width, layout.level_mask());
        let max_iterations = config.max_iterations.unwrap_or(layout.digits).min(layout.digits);

        let mut accepted: Vec<(usize, f64)> = Vec::new();
        let mut rejected: Vec<(usize, f64)> = Vec::new();
        let mut trace = Vec::new();
        let mut iterations_used = 0;
        let mut decode_steps_used = 0;
        for iteration in 1..=max_iterations {
            let guide = (iteration >= 2 && config.guided).then(|| {
                PrefixSet::new(decoder.beams().map(|b| {
                    layout
                        .digits_of(&b.tokens)
                        .expect("level-masked beams decode to digits")
                }))
            });
            let batch: Vec<usize> = stream
                .next_batch(config.draft_size, guide.as_ref())
                .into_iter()
                .map(|(item, _)| item)
                .collect();
            let verified = verify(self.scorer, self.catalog, &x, &batch, config.threshold, iteration);
            for c in &verified {
                if c.accepted {
                    accepted.push((c.item, c.score));
                } else {
                    rejected.push((c.item, c.score));
                }
            }
            trace.push(IterationTrace {
                iteration,
                guide: guide.map(|g| {
                    let mut v: Vec<Vec<u16>> = g.iter().cloned().collect();
                    v.sort();
                    v
                }),
                candidates: verified,
            });
            iterations_used = iteration;

            if accepted.len() >= config.k {
                accepted.sort_by(by_score_then_index);
                accepted.truncate(config.k);
                return Ok(RecommendationList {
                    entries: accepted
                        .into_iter()
                        .map(|(item, score)| RecommendationEntry {
                            item,
                            score,
                            provenance: Provenance::Accepted,
                        })
                        .collect(),
                    iterations_used,
                    decode_steps_used,
                    short: false,
                    trace,
                });
            }
            if decoder.step() {
                decode_steps_used += 1;
            }
        }
        // an iteration cap below l still needs full-length beams to parse
        while decoder.step() {
            decode_steps_used += 1;
        }

        accepted.sort_by(by_score_then_index);
        let mut taken: HashSet<usize> = accepted.iter().map(|a| a.0).collect();
        let mut entries: Vec<RecommendationEntry> = accepted
            .into_iter()
            .map(|(item, score)| RecommendationEntry {
                item,
                score,
                provenance: Provenance::Accepted,
            })
            .collect();
        for beam in decoder.beams() {
            if entries.len() >= config.k {
                break;
            }
            let Some(item) = self.catalog.parse_tokens(&beam.tokens) else {
                continue;
            };
            if subset.as_ref().is_some_and(|s| !s.contains(&item)) || !taken.insert(item) {
                continue;
            }
            entries.push(RecommendationEntry {
                item,
                score: beam.score,
                provenance: Provenance::BeamFill,
            });
        }
        if subset.is_some() && entries.len() < config.k {
            rejected.sort_by(by_score_then_index);
            let room = config.k - entries.len();
            entries.extend(
                rejected
                    .into_iter()
                    .filter(|(item, _)| taken.insert(*item))
                    .take(room)
                    .map(|(item, score)| RecommendationEntry {
                        item,
                        score,
                        provenance: Provenance::RejectedFill,
                    }),
            );
        }
        Ok(RecommendationList {
            short: entries.len() < config.k,
            entries,
            iterations_used,
            decode_steps_used,
            trace,
        })
    }

    /// Draft-verify loop confined to `subset`: drafts come only from the subset and
    /// beam fill skips non-members. A list still short after beam fill is padded with
    /// rejected drafts, best verification score first.
    pub fn subset_rank(
        &self,
        history: &[usize],
        subset: &[usize],
        config: &SpecGRConfig,
    ) -> Result<RecommendationList, EngineError> {
        let config = SpecGRConfig {
            subset: Some(subset.to_vec()),
            ..config.clone()
        };
        self.recommend(history, &config)
    }

    /// Verification scores of `candidates` for `history`.
    pub fn verify(
        &self,
        history: &[usize],
        candidates: &[usize],
        threshold: f64,
    ) -> Result<Vec<VerifiedCandidate>, EngineError> {
        let x = self.check_history(history)?;
        self.check_items(candidates)?;
        Ok(verify(self.scorer, self.catalog, &x, candidates, threshold, 1))
    }
}

#[cfg(test)]
mod tests;
