//! Item registry: external ids, normalized embeddings, semantic IDs and the prefix trie.

mod io;
mod layout;
mod quantize;
mod trie;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    read_embeddings, read_semantic_id_dump, write_embeddings, write_semantic_id_dump,
    EmbeddingHeader, SemanticIdRecord,
};
pub use layout::{Token, TokenLayout, BOS, EOS, NUM_SPECIAL_TOKENS};
pub use quantize::{
    assign_semantic_id, fit_codebooks, Codebooks, CollisionRegistry, KMEANS_MAX_ITERATIONS,
    KMEANS_RELATIVE_TOLERANCE,
};
pub use trie::{NodeId, PrefixTrie, ROOT};

use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("embeddings contain non-finite values")]
    NonFinite,
    #[error("level {level}: only {distinct} distinct residual vectors, codebook needs {required}")]
    InsufficientDistinct {
        level: usize,
        distinct: usize,
        required: usize,
    },
    #[error("identification counter exhausted for prefix {prefix:?} (capacity {capacity}); codebooks are too coarse for this catalog")]
    IdCapacity { prefix: Vec<u16>, capacity: usize },
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("duplicate semantic id {0}")]
    DuplicateSemanticId(SemanticId),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The digit sequence identifying one item. The last digit is the collision counter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemanticId(Vec<u16>);

impl SemanticId {
    pub fn new(digits: Vec<u16>) -> Self {
        Self(digits)
    }

    pub fn digits(&self) -> &[u16] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Digits without the identification counter.
    pub fn semantic_prefix(&self) -> &[u16] {
        &self.0[..self.0.len().saturating_sub(1)]
    }
}

impl fmt::Display for SemanticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "-")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ">")
    }
}

/// Immutable-after-build item registry.
///
/// Internal item indices are the dense range `0..len()`; [`Catalog::add_item`] is the
/// only mutation and only appends.
#[derive(Debug, Clone)]
pub struct Catalog {
    layout: TokenLayout,
    external_ids: Vec<String>,
    index_of: HashMap<String, usize>,
    embeddings: Matrix,
    semantic_ids: Vec<SemanticId>,
    seen: Vec<bool>,
    codebooks: Codebooks,
    registry: CollisionRegistry,
    trie: PrefixTrie,
}

impl Catalog {
    /// Tokenizes a full catalog.
    ///
    /// Codebooks are fitted on the training (seen) items only. Identification counters
    /// go to seen items in ascending index order first, then to unseen items, so items
    /// absent from training never take a counter from a training item.
    pub fn build(
        ids: Vec<String>,
        embeddings: &Matrix,
        seen: Vec<bool>,
        layout: TokenLayout,
        seed: u64,
    ) -> Result<Self, CatalogError> {
        validate_rows(&ids, embeddings, &seen)?;
        let normalized = embeddings.normalized();

        let train_rows: Vec<&[f32]> = normalized
            .iter_rows()
            .zip(&seen)
            .filter(|(_, s)| **s)
            .map(|(r, _)| r)
            .collect();
        let train = if train_rows.is_empty() {
            normalized.clone()
        } else {
            Matrix::from_rows(&train_rows)
        };
        let codebooks = fit_codebooks(
            &train,
            layout.semantic_levels(),
            layout.codebook_size,
            seed,
        )?;

        let mut registry = CollisionRegistry::new();
        let mut semantic_ids: Vec<Option<SemanticId>> = vec![None; ids.len()];
        let order = (0..ids.len())
            .filter(|&i| seen[i])
            .chain((0..ids.len()).filter(|&i| !seen[i]));
        for i in order {
            semantic_ids[i] = Some(assign_semantic_id(
                normalized.row(i),
                &codebooks,
                &mut registry,
                layout.id_vocab,
            )?);
        }
        let semantic_ids = semantic_ids.into_iter().map(Option::unwrap).collect();
        Self::assemble(ids, normalized, semantic_ids, seen, codebooks, registry, layout)
    }

    /// Reassembles a catalog from previously assigned semantic IDs.
    pub fn from_parts(
        ids: Vec<String>,
        embeddings: &Matrix,
        seen: Vec<bool>,
        semantic_ids: Vec<SemanticId>,
        codebooks: Codebooks,
        layout: TokenLayout,
    ) -> Result<Self, CatalogError> {
        validate_rows(&ids, embeddings, &seen)?;
        if semantic_ids.len() != ids.len() {
            return Err(CatalogError::InvalidConfig(format!(
                "{} semantic ids for {} items",
                semantic_ids.len(),
                ids.len()
            )));
        }
        let mut registry = CollisionRegistry::new();
        for sid in &semantic_ids {
            check_digits(sid, &layout)?;
            let (prefix, last) = sid.digits().split_at(layout.digits - 1);
            registry.reserve(prefix, last[0]);
        }
        Self::assemble(
            ids,
            embeddings.normalized(),
            semantic_ids,
            seen,
            codebooks,
            registry,
            layout,
        )
    }

    fn assemble(
        ids: Vec<String>,
        embeddings: Matrix,
        semantic_ids: Vec<SemanticId>,
        seen: Vec<bool>,
        codebooks: Codebooks,
        registry: CollisionRegistry,
        layout: TokenLayout,
    ) -> Result<Self, CatalogError> {
        let mut index_of = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index_of.insert(id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId(id.clone()));
            }
        }
        let trie = PrefixTrie::build(
            semantic_ids
                .iter()
                .enumerate()
                .map(|(i, s)| (i, s.digits())),
        );
        // uniqueness: every full-length leaf holds exactly one item
        for sid in &semantic_ids {
            if trie.items_with_prefix(sid.digits()).len() != 1 {
                return Err(CatalogError::DuplicateSemanticId(sid.clone()));
            }
        }
        Ok(Self {
            layout,
            external_ids: ids,
            index_of,
            embeddings,
            semantic_ids,
            seen,
            codebooks,
            registry,
            trie,
        })
    }

    /// Appends a new (unseen) item, tokenized with the frozen codebooks.
    pub fn add_item(&mut self, id: String, embedding: &[f32]) -> Result<usize, CatalogError> {
        if self.index_of.contains_key(&id) {
            return Err(CatalogError::DuplicateId(id));
        }
        let mut row = embedding.to_vec();
        crate::matrix::normalize_in_place(&mut row);
        let sid = assign_semantic_id(
            &row,
            &self.codebooks,
            &mut self.registry,
            self.layout.id_vocab,
        )?;
        let index = self.external_ids.len();
        self.index_of.insert(id.clone(), index);
        self.external_ids.push(id);
        self.embeddings.push_row(&row);
        self.semantic_ids.push(sid);
        self.seen.push(false);
        self.trie = PrefixTrie::build(
            self.semantic_ids
                .iter()
                .enumerate()
                .map(|(i, s)| (i, s.digits())),
        );
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.external_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external_ids.is_empty()
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn codebooks(&self) -> &Codebooks {
        &self.codebooks
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn embedding(&self, item: usize) -> &[f32] {
        self.embeddings.row(item)
    }

    pub fn external_id(&self, item: usize) -> &str {
        &self.external_ids[item]
    }

    pub fn external_ids(&self) -> &[String] {
        &self.external_ids
    }

    pub fn index_of(&self, external: &str) -> Option<usize> {
        self.index_of.get(external).copied()
    }

    pub fn semantic_id(&self, item: usize) -> &SemanticId {
        &self.semantic_ids[item]
    }

    pub fn semantic_ids(&self) -> &[SemanticId] {
        &self.semantic_ids
    }

    pub fn is_seen(&self, item: usize) -> bool {
        self.seen[item]
    }

    pub fn seen_flags(&self) -> &[bool] {
        &self.seen
    }

    pub fn trie(&self) -> &PrefixTrie {
        &self.trie
    }

    /// Tokens of `item`'s semantic ID in the shared vocabulary.
    pub fn tokens(&self, item: usize) -> Vec<Token> {
        self.layout.tokens_of(self.semantic_ids[item].digits())
    }

    pub fn items_with_prefix(&self, prefix: &[u16]) -> &[usize] {
        self.trie.items_with_prefix(prefix)
    }

    /// Exact parse of a full digit sequence back to its item.
    pub fn lookup(&self, digits: &[u16]) -> Option<usize> {
        if digits.len() != self.layout.digits {
            return None;
        }
        self.trie.items_with_prefix(digits).first().copied()
    }

    /// Parses a decoded token path into an item, if it names one.
    pub fn parse_tokens(&self, tokens: &[Token]) -> Option<usize> {
        self.layout
            .digits_of(tokens)
            .and_then(|digits| self.lookup(&digits))
    }
}

fn validate_rows(ids: &[String], embeddings: &Matrix, seen: &[bool]) -> Result<(), CatalogError> {
    if ids.len() != embeddings.rows() || seen.len() != ids.len() {
        return Err(CatalogError::InvalidConfig(format!(
            "{} ids, {} embedding rows, {} seen flags",
            ids.len(),
            embeddings.rows(),
            seen.len()
        )));
    }
    if !embeddings.is_finite() {
        return Err(CatalogError::NonFinite);
    }
    Ok(())
}

fn check_digits(sid: &SemanticId, layout: &TokenLayout) -> Result<(), CatalogError> {
    if sid.len() != layout.digits {
        return Err(CatalogError::InvalidConfig(format!(
            "semantic id {sid} has {} digits, layout expects {}",
            sid.len(),
            layout.digits
        )));
    }
    for (level, &d) in sid.digits().iter().enumerate() {
        if d as usize >= layout.level_size(level) {
            return Err(CatalogError::InvalidConfig(format!(
                "semantic id {sid}: digit {d} outside level {level} vocabulary"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_catalog(n: usize, seed: u64, layout: TokenLayout) -> Catalog {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..8).map(|_| rng.random::<f32>() - 0.5).collect())
            .collect();
        let ids = (0..n).map(|i| format!("item{i}")).collect();
        Catalog::build(ids, &Matrix::from_rows(&rows), vec![true; n], layout, seed).unwrap()
    }

    #[test]
    fn semantic_ids_are_unique_and_well_formed() {
        let layout = TokenLayout::new(4, 8, 64);
        let catalog = random_catalog(300, 5, layout);
        let mut sids: Vec<_> = catalog.semantic_ids().to_vec();
        for s in &sids {
            assert_eq!(s.len(), 4);
            for (level, &d) in s.digits().iter().enumerate() {
                assert!((d as usize) < layout.level_size(level));
            }
        }
        sids.sort();
        sids.dedup();
        assert_eq!(sids.len(), 300);
        for i in 0..catalog.len() {
            assert_eq!(catalog.lookup(catalog.semantic_id(i).digits()), Some(i));
            assert_eq!(catalog.parse_tokens(&catalog.tokens(i)), Some(i));
        }
    }

    #[test]
    fn unseen_items_take_counters_after_seen_ones() {
        let rows = vec![vec![1.0f32, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let ids = (0..4).map(|i| format!("i{i}")).collect();
        // item 0 is unseen but shares its embedding with seen item 2
        let seen = vec![false, true, true, true];
        let layout = TokenLayout::new(2, 2, 4);
        let catalog = Catalog::build(ids, &Matrix::from_rows(&rows), seen, layout, 1).unwrap();
        assert_eq!(catalog.semantic_id(2).digits()[1], 0);
        assert_eq!(catalog.semantic_id(0).digits()[1], 1);
        assert_eq!(catalog.semantic_id(0).digits()[0], catalog.semantic_id(2).digits()[0]);
    }

    #[test]
    fn add_item_keeps_existing_ids() {
        let layout = TokenLayout::new(3, 4, 64);
        let mut catalog = random_catalog(50, 9, layout);
        let before = catalog.semantic_ids().to_vec();
        let probe = catalog.embedding(7).to_vec();
        let idx = catalog.add_item("new".into(), &probe).unwrap();
        assert_eq!(idx, 50);
        assert_eq!(&catalog.semantic_ids()[..50], &before[..]);
        assert!(!catalog.is_seen(idx));
        let new_sid = catalog.semantic_id(idx).clone();
        assert_eq!(new_sid.semantic_prefix(), before[7].semantic_prefix());
        assert_eq!(catalog.lookup(new_sid.digits()), Some(idx));
        assert!(matches!(
            catalog.add_item("new".into(), &probe),
            Err(CatalogError::DuplicateId(_))
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let layout = TokenLayout::new(4, 8, 64);
        let a = random_catalog(200, 3, layout);
        let b = random_catalog(200, 3, layout);
        assert_eq!(a.semantic_ids(), b.semantic_ids());
        assert_eq!(a.codebooks(), b.codebooks());
    }

    #[test]
    fn from_parts_rejects_duplicate_ids() {
        let layout = TokenLayout::new(2, 2, 4);
        let catalog = random_catalog(8, 1, layout);
        let mut sids = catalog.semantic_ids().to_vec();
        sids[1] = sids[0].clone();
        let err = Catalog::from_parts(
            catalog.external_ids().to_vec(),
            catalog.embeddings(),
            catalog.seen_flags().to_vec(),
            sids,
            catalog.codebooks().clone(),
            layout,
        )
        .unwrap_err();
        assert!(matches!(err, CatalogError::DuplicateSemanticId(_)));
    }
}
