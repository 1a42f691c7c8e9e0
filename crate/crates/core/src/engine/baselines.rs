//! Comparison methods: plain beam-search generation, heuristic unseen mixing,
//! trie-constrained beam search and exhaustive batch scoring over a subset.

use std::collections::HashSet;

use super::{
    by_score_then_index, verify, Engine, EngineError, Provenance, RecommendationEntry,
    RecommendationList,
};
use crate::catalog::PrefixTrie;
use crate::seqmodel::{BeamDecoder, TokenSequence};

impl Engine<'_> {
    fn require_width(beam_width: usize, k: usize) -> Result<(), EngineError> {
        if k == 0 || beam_width < k {
            return Err(EngineError::InvalidConfig(format!(
                "beam width {beam_width} must be at least K = {k} (K >= 1)"
            )));
        }
        Ok(())
    }

    /// Full-length decode, parsed to distinct items, best beam first.
    fn decode_items(
        &self,
        x: &TokenSequence,
        beam_width: usize,
        limit: usize,
        trie: Option<&PrefixTrie>,
    ) -> (Vec<RecommendationEntry>, usize) {
        let layout = *self.catalog.layout();
        let mut decoder = BeamDecoder::new(self.scorer, x, beam_width, layout.level_mask());
        if let Some(trie) = trie {
            decoder = decoder.constrained(trie, layout);
        }
        let mut steps = 0;
        while decoder.step() {
            steps += 1;
        }
        let mut seen = HashSet::new();
        let entries = decoder
            .beams()
            .filter_map(|b| self.catalog.parse_tokens(&b.tokens).map(|item| (item, b.score)))
            .filter(|(item, _)| seen.insert(*item))
            .take(limit)
            .map(|(item, score)| RecommendationEntry {
                item,
                score,
                provenance: Provenance::BeamFill,
            })
            .collect();
        (entries, steps)
    }

    /// Generation-only baseline: decode all levels at width `beam_width` and parse.
    /// Paths that name no item are dropped, so the list can come back short.
    pub fn beam_only_recommend(
        &self,
        history: &[usize],
        beam_width: usize,
        k: usize,
    ) -> Result<RecommendationList, EngineError> {
        Self::require_width(beam_width, k)?;
        let x = self.check_history(history)?;
        let (entries, steps) = self.decode_items(&x, beam_width, k, None);
        Ok(RecommendationList {
            short: entries.len() < k,
            entries,
            iterations_used: 0,
            decode_steps_used: steps,
            trace: Vec::new(),
        })
    }

    /// Beam-search items truncated to `K - floor(ρK)`, followed by the
    /// `floor(ρK)` most similar unseen items from the drafter ranking.
    pub fn heuristic_mix_recommend(
        &self,
        history: &[usize],
        beam_width: usize,
        k: usize,
        unseen_fraction: f64,
    ) -> Result<RecommendationList, EngineError> {
        if !(0.0..=1.0).contains(&unseen_fraction) {
            return Err(EngineError::InvalidConfig(format!(
                "unseen fraction {unseen_fraction} outside [0, 1]"
            )));
        }
        Self::require_width(beam_width, k)?;
        let x = self.check_history(history)?;
        let mixed = (unseen_fraction * k as f64).floor() as usize;
        let (mut entries, steps) = if k > mixed {
            self.decode_items(&x, beam_width, k - mixed, None)
        } else {
            (Vec::new(), 0)
        };
        if mixed > 0 {
            let taken: HashSet<usize> = entries.iter().map(|e| e.item).collect();
            let query = self.index.query(self.catalog, Some(self.scorer), history)?;
            let stream = self
                .index
                .open_stream(self.catalog, &query, &HashSet::new(), None);
            entries.extend(
                stream
                    .ranking()
                    .iter()
                    .filter(|(item, _)| !self.catalog.is_seen(*item) && !taken.contains(item))
                    .take(mixed)
                    .map(|&(item, sim)| RecommendationEntry {
                        item,
                        score: sim as f64,
                        provenance: Provenance::UnseenMix,
                    }),
            );
        }
        Ok(RecommendationList {
            short: entries.len() < k,
            entries,
            iterations_used: 0,
            decode_steps_used: steps,
            trace: Vec::new(),
        })
    }

    /// Beam search restricted to the semantic-ID paths of `subset`.
    pub fn constrained_beam_rank(
        &self,
        history: &[usize],
        subset: &[usize],
        beam_width: usize,
        k: usize,
    ) -> Result<RecommendationList, EngineError> {
        Self::require_width(beam_width, k)?;
        let x = self.check_history(history)?;
        self.check_items(subset)?;
        let trie = PrefixTrie::build(
            subset
                .iter()
                .map(|&i| (i, self.catalog.semantic_id(i).digits())),
        );
        let (entries, steps) = self.decode_items(&x, beam_width, k, Some(&trie));
        Ok(RecommendationList {
            short: entries.len() < k,
            entries,
            iterations_used: 0,
            decode_steps_used: steps,
            trace: Vec::new(),
        })
    }

    /// Scores every subset member in fixed-size batches and keeps the top `K`.
    pub fn batch_score_rank(
        &self,
        history: &[usize],
        subset: &[usize],
        k: usize,
        batch_size: usize,
    ) -> Result<RecommendationList, EngineError> {
        if k == 0 || batch_size == 0 {
            return Err(EngineError::InvalidConfig("k and batch_size must be positive".into()));
        }
        let x = self.check_history(history)?;
        self.check_items(subset)?;
        let mut items = subset.to_vec();
        items.sort_unstable();
        items.dedup();
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(items.len());
        for chunk in items.chunks(batch_size) {
            scored.extend(
                verify(self.scorer, self.catalog, &x, chunk, f64::NEG_INFINITY, 1)
                    .into_iter()
                    .map(|c| (c.item, c.score)),
            );
        }
        scored.sort_by(by_score_then_index);
        scored.truncate(k);
        Ok(RecommendationList {
            short: scored.len() < k,
            entries: scored
                .into_iter()
                .map(|(item, score)| RecommendationEntry {
                    item,
                    score,
                    provenance: Provenance::Scored,
                })
                .collect(),
            iterations_used: 0,
            decode_steps_used: 0,
            trace: Vec::new(),
        })
    }
}
