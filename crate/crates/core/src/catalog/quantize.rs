//! Residual k-means tokenizer: turns dense item embeddings into semantic-ID digits.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CatalogError, SemanticId};
use crate::matrix::{squared_distance, Matrix};

pub const KMEANS_MAX_ITERATIONS: usize = 25;
pub const KMEANS_RELATIVE_TOLERANCE: f64 = 1e-6;

/// Per-level centroid tables of a residual quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebooks {
    pub dim: usize,
    pub codebook_size: usize,
    pub levels: Vec<Matrix>,
}

impl Codebooks {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Nearest-centroid digits on successive residuals.
    pub fn encode(&self, embedding: &[f32]) -> Vec<u16> {
        self.encode_with_residual(embedding).0
    }

    pub fn encode_with_residual(&self, embedding: &[f32]) -> (Vec<u16>, Vec<f32>) {
        let mut residual = embedding.to_vec();
        let mut digits = Vec::with_capacity(self.levels.len());
        for centroids in &self.levels {
            let code = nearest(centroids, &residual).0;
            residual
                .iter_mut()
                .zip(centroids.row(code))
                .for_each(|(r, c)| *r -= c);
            digits.push(code as u16);
        }
        (digits, residual)
    }

    /// Mean squared residual norm before quantization (index 0) and after each level.
    pub fn residual_errors(&self, data: &Matrix) -> Vec<f64> {
        let mut residuals = data.clone();
        let mut out = vec![mean_squared_norm(&residuals)];
        for centroids in &self.levels {
            for i in 0..residuals.rows() {
                let row = residuals.row_mut(i);
                let code = nearest(centroids, row).0;
                row.iter_mut()
                    .zip(centroids.row(code))
                    .for_each(|(r, c)| *r -= c);
            }
            out.push(mean_squared_norm(&residuals));
        }
        out
    }
}

fn mean_squared_norm(m: &Matrix) -> f64 {
    if m.rows() == 0 {
        return 0.0;
    }
    let total: f64 = m
        .iter_rows()
        .map(|r| r.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>())
        .sum();
    total / m.rows() as f64
}

/// Index of the nearest centroid and its squared distance; ties go to the lower index.
fn nearest(centroids: &Matrix, v: &[f32]) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(row, v);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn distinct_rows(m: &Matrix) -> usize {
    m.iter_rows()
        .map(|r| r.iter().map(|x| x.to_bits()).collect::<Vec<u32>>())
        .collect::<HashSet<_>>()
        .len()
}

/// Fits `levels` residual k-means codebooks of `codebook_size` centroids each.
///
/// Each level is seeded from `seed` and its level index, so the result is
/// bit-identical for identical inputs.
pub fn fit_codebooks(
    embeddings: &Matrix,
    levels: usize,
    codebook_size: usize,
    seed: u64,
) -> Result<Codebooks, CatalogError> {
    if levels == 0 {
        return Err(CatalogError::InvalidConfig(
            "at least one semantic level is required".into(),
        ));
    }
    if codebook_size == 0 {
        return Err(CatalogError::InvalidConfig("codebook_size must be positive".into()));
    }
    if !embeddings.is_finite() {
        return Err(CatalogError::NonFinite);
    }
    if embeddings.rows() < codebook_size {
        return Err(CatalogError::InsufficientDistinct {
            level: 1,
            distinct: embeddings.rows(),
            required: codebook_size,
        });
    }

    let mut residuals = embeddings.clone();
    let mut tables = Vec::with_capacity(levels);
    for level in 0..levels {
        let distinct = distinct_rows(&residuals);
        if distinct < codebook_size {
            return Err(CatalogError::InsufficientDistinct {
                level: level + 1,
                distinct,
                required: codebook_size,
            });
        }
        let level_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(level as u64 + 1);
        let centroids = kmeans(&residuals, codebook_size, level_seed);
        for i in 0..residuals.rows() {
            let row = residuals.row_mut(i);
            let code = nearest(&centroids, row).0;
            row.iter_mut()
                .zip(centroids.row(code))
                .for_each(|(r, c)| *r -= c);
        }
        tables.push(centroids);
    }
    Ok(Codebooks {
        dim: embeddings.cols(),
        codebook_size,
        levels: tables,
    })
}

/// Lloyd's k-means with k-means++ seeding. Requires at least `k` distinct rows.
pub(crate) fn kmeans(data: &Matrix, k: usize, seed: u64) -> Matrix {
    let n = data.rows();
    let dim = data.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = Matrix::zeros(0, dim);
    centroids.push_row(data.row(rng.random_range(0..n)));
    let mut min_dist: Vec<f64> = data
        .iter_rows()
        .map(|r| squared_distance(r, centroids.row(0)) as f64)
        .collect();
    while centroids.rows() < k {
        let total: f64 = min_dist.iter().sum();
        let threshold = rng.random::<f64>() * total;
        let mut acc = 0.0;
        // falls back to the farthest point if rounding leaves the threshold unreached
        let mut chosen = argmax(&min_dist);
        for (i, d) in min_dist.iter().enumerate() {
            acc += d;
            if acc > threshold && *d > 0.0 {
                chosen = i;
                break;
            }
        }
        centroids.push_row(data.row(chosen));
        let newest = centroids.rows() - 1;
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = squared_distance(data.row(i), centroids.row(newest)) as f64;
            if nd < *d {
                *d = nd;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    let mut distances = vec![0f32; n];
    let mut previous = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut inertia = 0.0f64;
        for i in 0..n {
            let (c, d) = nearest(&centroids, data.row(i));
            assignment[i] = c;
            distances[i] = d;
            inertia += d as f64;
        }

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(data.row(i)) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the worst-served point
                let far = argmax_f32(&distances);
                distances[far] = 0.0;
                centroids.row_mut(c).copy_from_slice(data.row(far));
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids
                .row_mut(c)
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *dst = (s * inv) as f32;
            }
        }

        if inertia == 0.0 || previous - inertia <= KMEANS_RELATIVE_TOLERANCE * previous {
            break;
        }
        previous = inertia;
    }
    centroids
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn argmax_f32(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Next free identification counter per semantic prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollisionRegistry {
    next: HashMap<Vec<u16>, u16>,
}

impl CollisionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Claims the next counter for `prefix`, failing once `id_vocab` counters are used.
    pub fn claim(&mut self, prefix: &[u16], id_vocab: usize) -> Result<u16, CatalogError> {
        let slot = self.next.entry(prefix.to_vec()).or_insert(0);
        if (*slot as usize) >= id_vocab {
            return Err(CatalogError::IdCapacity {
                prefix: prefix.to_vec(),
                capacity: id_vocab,
            });
        }
        let id = *slot;
        *slot += 1;
        Ok(id)
    }

    /// Marks an existing `(prefix, counter)` as used, e.g. when reloading a catalog.
    pub fn reserve(&mut self, prefix: &[u16], counter: u16) {
        let slot = self.next.entry(prefix.to_vec()).or_insert(0);
        if counter >= *slot {
            *slot = counter + 1;
        }
    }

    pub fn used(&self, prefix: &[u16]) -> u16 {
        self.next.get(prefix).copied().unwrap_or(0)
    }
}

/// Quantizes `embedding` and appends the prefix's next identification counter.
pub fn assign_semantic_id(
    embedding: &[f32],
    codebooks: &Codebooks,
    registry: &mut CollisionRegistry,
    id_vocab: usize,
) -> Result<SemanticId, CatalogError> {
    if embedding.len() != codebooks.dim {
        return Err(CatalogError::DimensionMismatch {
            expected: codebooks.dim,
            found: embedding.len(),
        });
    }
    if embedding.iter().any(|x| !x.is_finite()) {
        return Err(CatalogError::NonFinite);
    }
    let mut digits = codebooks.encode(embedding);
    let id = registry.claim(&digits, id_vocab)?;
    digits.push(id);
    Ok(SemanticId::new(digits))
}
