//! Seeded synthetic interaction data.
//!
//! Item vectors sit around latent cluster centres that drift along a ring, so
//! neighbouring clusters are similar. Users walk between clusters with a Markov
//! chain that favours staying put or moving to an adjacent cluster. A fraction of
//! the catalog is released late, after the validation cut-off, and enjoys a
//! popularity boost while fresh; those items become the unseen targets of a
//! temporal split.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::split::{Interaction, InteractionLog};
use crate::matrix::{normalize_in_place, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_items: usize,
    pub num_users: usize,
    pub num_clusters: usize,
    pub dim: usize,
    pub min_sequence: usize,
    pub max_sequence: usize,
    /// Standard deviation of item vectors around their cluster centre.
    pub item_spread: f32,
    /// Size of the drift step between consecutive cluster centres.
    pub centre_step: f32,
    pub stay_prob: f64,
    /// Probability of moving to one of the two ring neighbours; the rest is a uniform jump.
    pub neighbour_prob: f64,
    /// Share of items released after the validation cut-off.
    pub late_item_fraction: f64,
    /// Popularity multiplier for an item younger than `freshness`.
    pub new_item_boost: f64,
    pub freshness: i64,
    /// Zipf exponent of base popularity within a cluster.
    pub popularity_skew: f64,
    pub horizon: i64,
    /// Mean gap between a user's consecutive interactions, as a fraction of the horizon.
    pub mean_gap: f64,
    pub valid_cutoff: f64,
    pub test_cutoff: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_items: 2000,
            num_users: 3000,
            num_clusters: 40,
            dim: 32,
            min_sequence: 5,
            max_sequence: 20,
            item_spread: 0.3,
            centre_step: 0.9,
            stay_prob: 0.7,
            neighbour_prob: 0.25,
            late_item_fraction: 0.12,
            new_item_boost: 4.0,
            freshness: 100_000,
            popularity_skew: 1.0,
            horizon: 1_000_000,
            mean_gap: 0.02,
            valid_cutoff: 0.8,
            test_cutoff: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Ordered by release time.
    pub item_ids: Vec<String>,
    pub embeddings: Matrix,
    pub release: Vec<i64>,
    pub cluster: Vec<usize>,
    pub log: InteractionLog,
    pub t_valid: i64,
    pub t_test: i64,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f32) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z as f32
        })
        .collect()
}

pub fn generate(config: &SyntheticConfig) -> SyntheticData {
    let c = config;
    assert!(c.num_items > 0 && c.num_clusters > 0 && c.dim > 0, "empty synthetic config");
    assert!(c.min_sequence >= 1 && c.min_sequence <= c.max_sequence);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let t_valid = (c.valid_cutoff * c.horizon as f64) as i64;
    let t_test = (c.test_cutoff * c.horizon as f64) as i64;

    // cluster centres: a closed random walk on the sphere
    let mut centres: Vec<Vec<f32>> = Vec::with_capacity(c.num_clusters);
    let mut cur = gaussian_vec(&mut rng, c.dim, 1.0);
    normalize_in_place(&mut cur);
    for _ in 0..c.num_clusters {
        centres.push(cur.clone());
        let step = gaussian_vec(&mut rng, c.dim, c.centre_step / (c.dim as f32).sqrt());
        cur.iter_mut().zip(step).for_each(|(a, b)| *a += b);
        normalize_in_place(&mut cur);
    }

    // items: cluster, vector, release time, base popularity
    let n_late = (c.late_item_fraction * c.num_items as f64).round() as usize;
    let late_window = (c.horizon - t_valid).max(1);
    let mut items: Vec<(i64, usize, Vec<f32>)> = (0..c.num_items)
        .map(|i| {
            let cl = rng.random_range(0..c.num_clusters);
            let noise = gaussian_vec(&mut rng, c.dim, c.item_spread / (c.dim as f32).sqrt());
            let mut v: Vec<f32> = centres[cl].iter().zip(noise).map(|(a, b)| a + b).collect();
            normalize_in_place(&mut v);
            let release = if i < c.num_items - n_late {
                0
            } else {
                t_valid + rng.random_range(0..late_window)
            };
            (release, cl, v)
        })
        .collect();
    items.sort_by_key(|it| it.0);

    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); c.num_clusters];
    for (i, it) in items.iter().enumerate() {
        by_cluster[it.1].push(i);
    }
    let mut popularity = vec![0.0f64; c.num_items];
    for members in &mut by_cluster {
        let mut ranks: Vec<usize> = (0..members.len()).collect();
        ranks.shuffle(&mut rng);
        for (&item, r) in members.iter().zip(ranks) {
            popularity[item] = 1.0 / ((r + 1) as f64).powf(c.popularity_skew);
        }
    }

    let item_ids: Vec<String> = (0..c.num_items).map(|i| format!("item{i:05}")).collect();
    let gap = Exp::new(1.0 / (c.mean_gap * c.horizon as f64)).expect("positive gap");
    let mut records = Vec::new();
    for u in 0..c.num_users {
        let user = format!("user{u:05}");
        let len = rng.random_range(c.min_sequence..=c.max_sequence);
        let mut t = rng.random_range(0..c.horizon);
        let mut cl = rng.random_range(0..c.num_clusters);
        for _ in 0..len {
            if t >= c.horizon {
                break;
            }
            let item = pick_item(&mut rng, &by_cluster[cl], &items, &popularity, t, c)
                .or_else(|| {
                    // nothing released in this cluster yet: fall back to any live item
                    let live: Vec<usize> = (0..c.num_items).filter(|&i| items[i].0 <= t).collect();
                    pick_item(&mut rng, &live, &items, &popularity, t, c)
                });
            if let Some(item) = item {
                records.push(Interaction {
                    user: user.clone(),
                    item: item_ids[item].clone(),
                    ts: t,
                });
                cl = items[item].1;
            }
            cl = next_cluster(&mut rng, cl, c);
            t += gap.sample(&mut rng).ceil() as i64;
        }
    }
    records.sort_by(|a, b| a.ts.cmp(&b.ts).then_with(|| a.user.cmp(&b.user)));

    let mut embeddings = Matrix::zeros(0, 0);
    let mut release = Vec::with_capacity(c.num_items);
    let mut cluster = Vec::with_capacity(c.num_items);
    for (r, cl, v) in items {
        embeddings.push_row(&v);
        release.push(r);
        cluster.push(cl);
    }
    SyntheticData {
        item_ids,
        embeddings,
        release,
        cluster,
        log: InteractionLog::new(records),
        t_valid,
        t_test,
    }
}

fn next_cluster(rng: &mut ChaCha8Rng, cl: usize, c: &SyntheticConfig) -> usize {
    let u: f64 = rng.random();
    if u < c.stay_prob {
        cl
    } else if u < c.stay_prob + c.neighbour_prob {
        if rng.random_bool(0.5) {
            (cl + 1) % c.num_clusters
        } else {
            (cl + c.num_clusters - 1) % c.num_clusters
        }
    } else {
        rng.random_range(0..c.num_clusters)
    }
}

fn pick_item(
    rng: &mut ChaCha8Rng,
    candidates: &[usize],
    items: &[(i64, usize, Vec<f32>)],
    popularity: &[f64],
    t: i64,
    c: &SyntheticConfig,
) -> Option<usize> {
    let weights: Vec<(usize, f64)> = candidates
        .iter()
        .filter(|&&i| items[i].0 <= t)
        .map(|&i| {
            let fresh = items[i].0 > 0 && t - items[i].0 < c.freshness;
            (i, popularity[i] * if fresh { c.new_item_boost } else { 1.0 })
        })
        .collect();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    if weights.is_empty() || total <= 0.0 {
        return None;
    }
    let mut x = rng.random::<f64>() * total;
    for &(i, w) in &weights {
        if x < w {
            return Some(i);
        }
        x -= w;
    }
    weights.last().map(|w| w.0)
}
