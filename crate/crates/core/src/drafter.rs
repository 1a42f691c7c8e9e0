//! Inductive drafting by exact inner-product search over item vectors.
//!
//! Two vector sources are supported: the catalog's own feature embeddings
//! (auxiliary mode, history pooled by mean) and the scorer's `encode` applied to
//! `[bos, ID_i, eos]` (self mode, history encoded as the full token sequence).

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, BOS, EOS};
use crate::matrix::{dot, mean_normalized, normalize_in_place, Matrix};
use crate::seqmodel::{encode_sequence, ModelError, Scorer, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftMode {
    /// External item embeddings.
    Auxiliary,
    /// Vectors produced by the verifier's own encoder.
    #[serde(rename = "self")]
    SelfDraft,
}

impl fmt::Display for DraftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DraftMode::Auxiliary => "auxiliary",
            DraftMode::SelfDraft => "self",
        })
    }
}

impl FromStr for DraftMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auxiliary" | "aux" => Ok(DraftMode::Auxiliary),
            "self" => Ok(DraftMode::SelfDraft),
            other => Err(format!("unknown draft mode {other:?} (expected auxiliary|self)")),
        }
    }
}

/// Row-normalized item vectors, row `i` belonging to catalog item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftIndex {
    mode: DraftMode,
    vectors: Matrix,
}

impl DraftIndex {
    pub fn build(
        catalog: &Catalog,
        mode: DraftMode,
        scorer: Option<&dyn Scorer>,
    ) -> Result<Self, ModelError> {
        let vectors = match mode {
            DraftMode::Auxiliary => catalog.embeddings().normalized(),
            DraftMode::SelfDraft => {
                let scorer = scorer.ok_or(ModelError::Unsupported("encode"))?;
                let mut m = Matrix::zeros(0, 0);
                for i in 0..catalog.len() {
                    m.push_row(&item_encoding(catalog, scorer, i)?);
                }
                m
            }
        };
        Ok(Self { mode, vectors })
    }

    pub fn from_vectors(mode: DraftMode, vectors: Matrix) -> Self {
        Self {
            mode,
            vectors: vectors.normalized(),
        }
    }

    pub fn mode(&self) -> DraftMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    /// Appends the vector of a newly added catalog item (the last one).
    pub fn push_item(
        &mut self,
        catalog: &Catalog,
        scorer: Option<&dyn Scorer>,
    ) -> Result<(), ModelError> {
        let item = catalog.len() - 1;
        debug_assert_eq!(item, self.vectors.rows());
        let row = match self.mode {
            DraftMode::Auxiliary => {
                let mut r = catalog.embedding(item).to_vec();
                normalize_in_place(&mut r);
                r
            }
            DraftMode::SelfDraft => {
                item_encoding(catalog, scorer.ok_or(ModelError::Unsupported("encode"))?, item)?
            }
        };
        self.vectors.push_row(&row);
        Ok(())
    }

    /// Query vector for a history.
    pub fn query(
        &self,
        catalog: &Catalog,
        scorer: Option<&dyn Scorer>,
        history: &[usize],
    ) -> Result<Vec<f32>, ModelError> {
        match self.mode {
            DraftMode::Auxiliary => Ok(mean_normalized(
                history.iter().map(|&i| self.vectors.row(i)),
                self.vectors.cols(),
            )),
            DraftMode::SelfDraft => {
                let scorer = scorer.ok_or(ModelError::Unsupported("encode"))?;
                let x = TokenSequence::from_history(catalog, history);
                encode_sequence(scorer, x.tokens())
            }
        }
    }

    /// Ranks every eligible item by similarity to `query`.
    pub fn open_stream<'c>(
        &self,
        catalog: &'c Catalog,
        query: &[f32],
        exclude: &HashSet<usize>,
        subset: Option<&[usize]>,
    ) -> DraftStream<'c> {
        let mut ranking: Vec<(usize, f32)> = match subset {
            Some(items) => {
                let mut items = items.to_vec();
                items.sort_unstable();
                items.dedup();
                items
                    .into_iter()
                    .filter(|i| !exclude.contains(i))
                    .map(|i| (i, dot(self.vectors.row(i), query)))
                    .collect()
            }
            None => (0..self.vectors.rows())
                .filter(|i| !exclude.contains(i))
                .map(|i| (i, dot(self.vectors.row(i), query)))
                .collect(),
        };
        ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        DraftStream {
            catalog,
            yielded: vec![false; ranking.len()],
            ranking,
            cursor: 0,
        }
    }
}

fn item_encoding(catalog: &Catalog, scorer: &dyn Scorer, item: usize) -> Result<Vec<f32>, ModelError> {
    let mut tokens = Vec::with_capacity(catalog.layout().digits + 2);
    tokens.push(BOS);
    tokens.extend(catalog.tokens(item));
    tokens.push(EOS);
    encode_sequence(scorer, &tokens)
}

/// Set of equal-length semantic-ID prefixes used to guide re-drafting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrefixSet {
    len: usize,
    prefixes: HashSet<Vec<u16>>,
}

impl PrefixSet {
    pub fn new<I: IntoIterator<Item = Vec<u16>>>(prefixes: I) -> Self {
        let prefixes: HashSet<Vec<u16>> = prefixes.into_iter().collect();
        let len = prefixes.iter().next().map_or(0, Vec::len);
        assert!(
            prefixes.iter().all(|p| p.len() == len),
            "guide prefixes must share one length"
        );
        Self { len, prefixes }
    }

    pub fn prefix_len(&self) -> usize {
        self.len
    }

    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    pub fn contains_prefix_of(&self, digits: &[u16]) -> bool {
        digits.len() >= self.len && self.prefixes.contains(&digits[..self.len])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<u16>> {
        self.prefixes.iter()
    }
}

/// Cursor over one query's similarity ranking.
///
/// Items are yielded at most once. Items skipped because they failed a prefix
/// filter stay available to later batches.
#[derive(Debug, Clone)]
pub struct DraftStream<'c> {
    catalog: &'c Catalog,
    ranking: Vec<(usize, f32)>,
    yielded: Vec<bool>,
    /// First ranking position not yet yielded.
    cursor: usize,
}

impl DraftStream<'_> {
    /// Next up-to-`size` unyielded items in ranking order whose prefix is in `prefixes`.
    pub fn next_batch(&mut self, size: usize, prefixes: Option<&PrefixSet>) -> Vec<(usize, f32)> {
        let mut batch = Vec::with_capacity(size.min(self.ranking.len()));
        let mut pos = self.cursor;
        while batch.len() < size && pos < self.ranking.len() {
            if !self.yielded[pos] {
                let (item, sim) = self.ranking[pos];
                let ok = prefixes.is_none_or(|p| {
                    p.contains_prefix_of(self.catalog.semantic_id(item).digits())
                });
                if ok {
                    self.yielded[pos] = true;
                    batch.push((item, sim));
                }
            }
            pos += 1;
        }
        while self.cursor < self.ranking.len() && self.yielded[self.cursor] {
            self.cursor += 1;
        }
        batch
    }

    /// Items not yet yielded, in ranking order.
    pub fn remaining(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.ranking
            .iter()
            .zip(&self.yielded)
            .skip(self.cursor)
            .filter(|(_, y)| !**y)
            .map(|(r, _)| *r)
    }

    pub fn ranking(&self) -> &[(usize, f32)] {
        &self.ranking
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor >= self.ranking.len()
    }
}
