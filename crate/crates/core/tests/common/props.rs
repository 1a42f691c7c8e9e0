//! Randomized invariant checks. Each returns the number of cases it ran.

use std::collections::HashSet;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specgr_core::catalog::{Catalog, PrefixTrie, Token, TokenLayout};
use specgr_core::drafter::{DraftIndex, DraftMode};
use specgr_core::engine::{Engine, SpecGRConfig};
use specgr_core::matrix::Matrix;
use specgr_core::seqmodel::{
    beam_search, fit_ngram, FnScorer, NGramConfig, Scorer, TokenSequence,
};

use super::{runner, small_fitted};

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Distinct full IDs, in-range digits, trie covering every item, bit-identical rebuilds.
pub fn catalog_uniqueness(cases: u32) -> Result<u32, String> {
    let strategy = (40usize..120, 3usize..6, 2usize..6, any::<u64>(), 0.5f64..1.0);
    runner(cases)
        .run(&strategy, |(n, dim, cb, seed, seen_frac)| {
            let layout = TokenLayout::new(4, cb, 128);
            let m = random_matrix(n, dim, seed);
            let ids: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
            let seen: Vec<bool> = (0..n).map(|i| (i as f64) < seen_frac * n as f64 || i < cb).collect();
            let a = Catalog::build(ids.clone(), &m, seen.clone(), layout, seed).map_err(|e| fail(e.to_string()))?;
            let b = Catalog::build(ids, &m, seen, layout, seed).map_err(|e| fail(e.to_string()))?;
            prop_assert_eq!(a.semantic_ids(), b.semantic_ids());
            prop_assert_eq!(a.codebooks(), b.codebooks());
            let distinct: HashSet<&[u16]> = a.semantic_ids().iter().map(|s| s.digits()).collect();
            prop_assert_eq!(distinct.len(), n);
            for (i, sid) in a.semantic_ids().iter().enumerate() {
                prop_assert_eq!(sid.len(), layout.digits);
                for (lvl, &d) in sid.digits().iter().enumerate() {
                    prop_assert!((d as usize) < layout.level_size(lvl));
                }
                prop_assert_eq!(a.lookup(sid.digits()), Some(i));
            }
            let mut all = a.items_with_prefix(&[]).to_vec();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let errs = a.codebooks().residual_errors(a.embeddings());
            prop_assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-9), "residuals {:?}", errs);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(cases)
}

/// Trie prefix lookup equals a linear scan, including out-of-range digits.
pub fn trie_scan(cases: u32) -> Result<u32, String> {
    let strategy = (
        prop::collection::vec(prop::collection::vec(0u16..4, 4), 0..200),
        prop::collection::vec(0u16..5, 0..=4),
    );
    runner(cases)
        .run(&strategy, |(ids, prefix)| {
            let trie = PrefixTrie::build(ids.iter().enumerate().map(|(i, d)| (i, d.as_slice())));
            let mut got = trie.items_with_prefix(&prefix).to_vec();
            got.sort_unstable();
            let want: Vec<usize> = (0..ids.len()).filter(|&i| ids[i].starts_with(&prefix)).collect();
            prop_assert_eq!(got, want);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(cases)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Every n-gram context yields a proper distribution; encodings are finite unit vectors.
pub fn distribution_normalization(cases: u32) -> Result<u32, String> {
    let layout = TokenLayout::new(4, 4, 8);
    let item = (0u16..4, 0u16..4, 0u16..4, 0u16..8).prop_map(|(a, b, c, d)| vec![a, b, c, d]);
    let corpus = prop::collection::vec(prop::collection::vec(item, 1..6), 1..12);
    let contexts = prop::collection::vec(
        prop::collection::vec(0 as Token..layout.vocab_size() as Token, 0..14),
        1..5,
    );
    let strategy = (corpus, 1usize..10, 0.01f64..2.0, 1usize..6, contexts);
    runner(cases)
        .run(&strategy, |(corpus, order, smoothing, dim, contexts)| {
            let seqs: Vec<TokenSequence> = corpus
                .iter()
                .map(|items| TokenSequence::from_digit_rows(&layout, items.iter().map(|d| d.as_slice())))
                .collect();
            let config = NGramConfig {
                order,
                smoothing,
                embedding_dim: dim,
            };
            let model = fit_ngram(&seqs, &layout, config).map_err(|e| fail(e.to_string()))?;
            for ctx in contexts {
                let lp = model.log_probs(&ctx);
                prop_assert_eq!(lp.len(), layout.vocab_size());
                prop_assert!(log_sum_exp(&lp).abs() < 1e-6, "lse {}", log_sum_exp(&lp));
                prop_assert!(lp.iter().all(|x| x.is_finite()));
            }
            let enc = model.encode(seqs[0].tokens()).map_err(|e| fail(e.to_string()))?;
            prop_assert!(enc.iter().all(|x| x.is_finite()));
            let norm: f32 = enc.iter().map(|x| x * x).sum::<f32>().sqrt();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-4);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(cases)
}

fn hashed_scorer(seed: u64, vocab: usize, levels: u64) -> impl Scorer {
    FnScorer::new(vocab, move |ctx: &[Token]| {
        let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
        for &t in ctx {
            h = (h ^ t as u64).wrapping_mul(0x1000_0000_01b3);
        }
        let logits: Vec<f64> = (0..vocab as u64)
            .map(|t| {
                let mut z = h.wrapping_add(t.wrapping_mul(0xbf58_476d_1ce4_e5b9));
                z ^= z >> 31;
                z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
                z ^= z >> 29;
                // few distinct values so ties are common
                (z % levels) as f64 * 0.7
            })
            .collect();
        let lse = log_sum_exp(&logits);
        logits.into_iter().map(|x| x - lse).collect()
    })
}

/// With every first-step prefix kept (width >= 8), two-step beam search returns
/// exactly the top-`width` of full enumeration, ties by token sequence.
pub fn beam_enumeration(cases: u32) -> Result<u32, String> {
    let layout = TokenLayout::new(2, 8, 8);
    let mask = layout.level_mask();
    let strategy = (any::<u64>(), 2u64..6, 8usize..=64, prop::collection::vec(0u16..8, 0..3));
    runner(cases)
        .run(&strategy, |(seed, levels, width, hist)| {
            let scorer = hashed_scorer(seed, layout.vocab_size(), levels);
            let rows: Vec<Vec<u16>> = hist.iter().map(|&d| vec![d, (d * 3) % 8]).collect();
            let x = TokenSequence::from_digit_rows(&layout, rows.iter().map(|r| r.as_slice()));
            let beams = beam_search(&scorer, &x, width, 2, &mask, None);

            let mut all: Vec<(Vec<Token>, f64)> = Vec::new();
            let base = x.tokens().to_vec();
            let first = scorer.log_probs(&base);
            for a in mask[0].clone() {
                let mut ctx = base.clone();
                ctx.push(a);
                let second = scorer.log_probs(&ctx);
                for b in mask[1].clone() {
                    all.push((vec![a, b], 0.0 + first[a as usize] + second[b as usize]));
                }
            }
            all.sort_by(|p, q| q.1.total_cmp(&p.1).then_with(|| p.0.cmp(&q.0)));
            all.truncate(width);
            let got: Vec<(Vec<Token>, f64)> = beams.into_iter().map(|b| (b.tokens, b.score)).collect();
            prop_assert_eq!(got, all);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(cases)
}

/// Raising the threshold never accepts more: accepted sets shrink monotonically.
pub fn acceptance_monotone(cases: u32) -> Result<u32, String> {
    let f = small_fitted();
    let index = DraftIndex::build(&f.catalog, DraftMode::Auxiliary, None).map_err(|e| e.to_string())?;
    let engine = Engine::new(&f.scorer, &f.catalog, &index);
    let n_cases = f.split.valid.len();
    let n_items = f.catalog.len();
    let strategy = (
        0..n_cases,
        -6.0f64..0.0,
        0.0f64..3.0,
        prop::collection::vec(0..n_items, 1..40),
        1usize..40,
    );
    runner(cases)
        .run(&strategy, |(ci, g_lo, dg, candidates, delta)| {
            let h = &f.split.valid[ci].history;
            let g_hi = g_lo + dg;
            let lo = engine.verify(h, &candidates, g_lo).map_err(|e| fail(e.to_string()))?;
            let hi = engine.verify(h, &candidates, g_hi).map_err(|e| fail(e.to_string()))?;
            for (a, b) in lo.iter().zip(&hi) {
                prop_assert_eq!(a.score, b.score);
                prop_assert!(!b.accepted || a.accepted);
            }
            let cfg = |threshold| SpecGRConfig {
                k: 5,
                draft_size: delta,
                threshold,
                beam_width: 5,
                ..Default::default()
            };
            let r_lo = engine.recommend(h, &cfg(g_lo)).map_err(|e| fail(e.to_string()))?;
            let r_hi = engine.recommend(h, &cfg(g_hi)).map_err(|e| fail(e.to_string()))?;
            prop_assert!(r_hi.trace[0].accepted() <= r_lo.trace[0].accepted());
            prop_assert!(r_hi.iterations_used >= r_lo.iterations_used);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(cases)
}

/// No method ever returns an item twice, more than `K` items, or items outside the subset.
pub fn no_duplicate_outputs(cases: u32) -> Result<u32, String> {
    let f = small_fitted();
    let aux = DraftIndex::build(&f.catalog, DraftMode::Auxiliary, None).map_err(|e| e.to_string())?;
    let selfd = DraftIndex::build(&f.catalog, DraftMode::SelfDraft, Some(&f.scorer)).map_err(|e| e.to_string())?;
    let n_items = f.catalog.len();
    let l = f.catalog.layout().digits;
    let strategy = (
        prop::collection::vec(0..n_items, 1..25),
        1usize..30,
        1usize..60,
        0usize..40,
        -5.0f64..0.5,
        any::<bool>(),
        prop::option::of(prop::collection::vec(0..n_items, 1..200)),
        0usize..6,
    );
    runner(cases)
        .run(&strategy, |(history, k, delta, extra_beam, gamma, guided, subset, method)| {
            let index = if method % 2 == 0 { &aux } else { &selfd };
            let engine = Engine::new(&f.scorer, &f.catalog, index);
            let beam = k + extra_beam;
            let config = SpecGRConfig {
                k,
                draft_size: delta,
                threshold: gamma,
                beam_width: beam,
                subset: None,
                max_iterations: None,
                guided,
            };
            let sub = subset.clone().unwrap_or_else(|| (0..n_items).collect());
            let list = match method {
                0 | 1 => match &subset {
                    Some(s) => engine.subset_rank(&history, s, &config),
                    None => engine.recommend(&history, &config),
                },
                2 => engine.beam_only_recommend(&history, beam, k),
                3 => engine.heuristic_mix_recommend(&history, beam, k, 0.3),
                4 => engine.constrained_beam_rank(&history, &sub, beam, k),
                _ => engine.batch_score_rank(&history, &sub, k, delta),
            }
            .map_err(|e| fail(e.to_string()))?;
            let items = list.items();
            let distinct: HashSet<usize> = items.iter().copied().collect();
            prop_assert_eq!(distinct.len(), items.len(), "duplicates in {:?}", items);
            prop_assert!(items.len() <= k);
            prop_assert_eq!(list.short, items.len() < k);
            prop_assert!(list.iterations_used <= l && list.decode_steps_used <= l);
            if subset.is_some() && method != 2 && method != 3 {
                let allowed: HashSet<usize> = sub.iter().copied().collect();
                prop_assert!(items.iter().all(|i| allowed.contains(i)));
            }
            if method <= 1 && subset.is_some() {
                // drafted-but-rejected members pad a short subset list
                let drafted: usize = list.trace.iter().map(|t| t.candidates.len()).sum();
                prop_assert!(items.len() >= k.min(drafted));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(cases)
}

/// The suite with its case budget, in the order the acceptance run reports it.
pub const SUITE: [(&str, fn(u32) -> Result<u32, String>, u32); 6] = [
    ("catalog uniqueness", catalog_uniqueness, 500),
    ("trie/scan equivalence", trie_scan, 3000),
    ("distribution normalization", distribution_normalization, 1500),
    ("beam vs enumeration", beam_enumeration, 2000),
    ("acceptance monotonicity", acceptance_monotone, 2000),
    ("no duplicate outputs", no_duplicate_outputs, 1500),
];

