use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::catalog::{Codebooks, SemanticId, Token, TokenLayout, EOS};
use crate::drafter::DraftMode;
use crate::matrix::{dot, Matrix};
use crate::seqmodel::{fit_ngram, FnScorer, NGramConfig, NGramScorer};

struct Fixture {
    catalog: Catalog,
    scorer: NGramScorer,
    index: DraftIndex,
    histories: Vec<Vec<usize>>,
}

fn fixture(n: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| (0..8).map(|_| rng.random::<f32>() - 0.5).collect())
        .collect();
    let ids = (0..n).map(|i| format!("it{i}")).collect();
    let seen: Vec<bool> = (0..n).map(|i| i < n * 4 / 5).collect();
    let layout = TokenLayout::new(4, 4, 64);
    let catalog = Catalog::build(ids, &Matrix::from_rows(&rows), seen, layout, seed).unwrap();
    let emb = catalog.embeddings();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n * 4 / 5).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| dot(emb.row(i), emb.row(b)).total_cmp(&dot(emb.row(i), emb.row(a))));
            order.truncate(4);
            order
        })
        .collect();
    let mut histories = Vec::new();
    for _ in 0..120 {
        let mut cur = rng.random_range(0..n * 4 / 5);
        let mut h = vec![cur];
        for _ in 0..7 {
            cur = *neighbours[cur].choose(&mut rng).unwrap();
            h.push(cur);
        }
        histories.push(h);
    }
    let seqs: Vec<TokenSequence> = histories
        .iter()
        .map(|h| TokenSequence::from_history(&catalog, h))
        .collect();
    let scorer = fit_ngram(&seqs, &layout, NGramConfig::for_layout(&layout)).unwrap();
    let index = DraftIndex::build(&catalog, DraftMode::Auxiliary, None).unwrap();
    Fixture {
        catalog,
        scorer,
        index,
        histories,
    }
}

/// Mean per-digit log-probability computed by re-querying the full distribution
/// at every position.
fn oracle_score(scorer: &dyn Scorer, catalog: &Catalog, x: &TokenSequence, item: usize) -> f64 {
    let tokens = catalog.tokens(item);
    let used = if catalog.is_seen(item) { tokens.len() } else { tokens.len() - 1 };
    let mut ctx = x.tokens().to_vec();
    let mut total = 0.0;
    for &t in &tokens[..used] {
        total += scorer.log_probs(&ctx)[t as usize];
        ctx.push(t);
    }
    total / used as f64
}

fn exhaustive_top_k(f: &Fixture, history: &[usize], items: &[usize], k: usize) -> Vec<usize> {
    let x = TokenSequence::from_history(&f.catalog, history);
    let mut scored: Vec<(usize, f64)> = items
        .iter()
        .map(|&i| (i, oracle_score(&f.scorer, &f.catalog, &x, i)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|s| s.0).collect()
}

fn steps_since_eos(ctx: &[Token]) -> usize {
    ctx.iter().rposition(|&t| t == EOS).map_or(0, |p| ctx.len() - p - 1)
}

/// Scorer that puts fixed log-probabilities on one digit path.
fn path_scorer(layout: TokenLayout, path: Vec<Token>, lps: Vec<f64>) -> impl Scorer {
    let v = layout.vocab_size();
    FnScorer::new(v, move |ctx: &[Token]| {
        let s = steps_since_eos(ctx).min(path.len() - 1);
        let mut out = vec![-20.0; v];
        out[path[s] as usize] = lps[s];
        out
    })
}

#[test]
fn seen_item_averages_all_digits() {
    let f = fixture(60, 1);
    let item = 0;
    assert!(f.catalog.is_seen(item));
    let scorer = path_scorer(*f.catalog.layout(), f.catalog.tokens(item), vec![-1.0, -2.0, -3.0, -2.0]);
    let x = TokenSequence::from_history(&f.catalog, &[1]);
    let v = verify(&scorer, &f.catalog, &x, &[item], -2.5, 1);
    assert!((v[0].score + 2.0).abs() < 1e-12);
    assert!(v[0].accepted);
    let v = verify(&scorer, &f.catalog, &x, &[item], -2.0, 1);
    assert!(!v[0].accepted, "acceptance is strict");
}

#[test]
fn unseen_item_masks_the_identification_digit() {
    let f = fixture(60, 1);
    let item = 59;
    assert!(!f.catalog.is_seen(item));
    let scorer = path_scorer(*f.catalog.layout(), f.catalog.tokens(item), vec![-1.0, -2.0, -3.0, -40.0]);
    let x = TokenSequence::from_history(&f.catalog, &[1]);
    let v = verify(&scorer, &f.catalog, &x, &[item], f64::NEG_INFINITY, 1);
    assert!((v[0].score + 2.0).abs() < 1e-12);
}

#[test]
fn certain_candidate_scores_zero() {
    let f = fixture(60, 1);
    let scorer = path_scorer(*f.catalog.layout(), f.catalog.tokens(3), vec![0.0; 4]);
    let x = TokenSequence::from_history(&f.catalog, &[1]);
    let v = verify(&scorer, &f.catalog, &x, &[3], -1e-9, 1);
    assert_eq!(v[0].score, 0.0);
    assert!(v[0].accepted);
}

#[test]
fn accept_everything_exits_on_first_iteration() {
    let f = fixture(200, 2);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    let cfg = SpecGRConfig {
        k: 10,
        draft_size: 25,
        threshold: f64::NEG_INFINITY,
        ..SpecGRConfig::default()
    };
    let out = engine.recommend(&f.histories[0], &cfg).unwrap();
    assert_eq!(out.iterations_used, 1);
    assert_eq!(out.decode_steps_used, 0);
    let drafted: Vec<usize> = out.trace[0].candidates.iter().map(|c| c.item).collect();
    assert_eq!(drafted.len(), 25);
    assert_eq!(out.items(), exhaustive_top_k(&f, &f.histories[0], &drafted, 10));
    assert!(out.entries.iter().all(|e| e.provenance == Provenance::Accepted));
}

#[test]
fn whole_catalog_draft_matches_exhaustive_scoring() {
    let f = fixture(200, 3);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    let cfg = SpecGRConfig {
        k: 20,
        draft_size: f.catalog.len(),
        threshold: f64::NEG_INFINITY,
        ..SpecGRConfig::default()
    };
    let all: Vec<usize> = (0..f.catalog.len()).collect();
    for h in f.histories.iter().take(10) {
        let out = engine.recommend(h, &cfg).unwrap();
        assert_eq!(out.items(), exhaustive_top_k(&f, h, &all, 20));
    }
}

#[test]
fn reject_everything_falls_back_to_beam_search() {
    let f = fixture(200, 4);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    let cfg = SpecGRConfig {
        k: 10,
        threshold: f64::INFINITY,
        beam_width: 20,
        ..SpecGRConfig::default()
    };
    for h in f.histories.iter().take(10) {
        let spec = engine.recommend(h, &cfg).unwrap();
        let beam = engine.beam_only_recommend(h, 20, 10).unwrap();
        assert_eq!(spec.entries, beam.entries);
        assert_eq!(spec.decode_steps_used, 4);
        assert_eq!(spec.iterations_used, 4);
    }
}

#[test]
fn guided_batches_follow_beam_prefixes() {
    let f = fixture(200, 5);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    let cfg = SpecGRConfig {
        k: 30,
        draft_size: 10,
        threshold: -1.0,
        beam_width: 8,
        ..SpecGRConfig::default()
    };
    let out = engine.recommend(&f.histories[1], &cfg).unwrap();
    for it in out.trace.iter().skip(1) {
        let guide = it.guide.as_ref().unwrap();
        assert!(guide.iter().all(|g| g.len() == it.iteration - 1));
        for c in &it.candidates {
            let digits = f.catalog.semantic_id(c.item).digits();
            assert!(guide.contains(&digits[..it.iteration - 1].to_vec()));
        }
    }
    let mut all = HashSet::new();
    for it in &out.trace {
        for c in &it.candidates {
            assert!(all.insert(c.item), "item {} drafted twice", c.item);
        }
    }
}

#[test]
fn output_invariants_hold() {
    let f = fixture(200, 6);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    for (i, h) in f.histories.iter().take(20).enumerate() {
        let cfg = SpecGRConfig {
            k: 10,
            draft_size: 10,
            threshold: -1.5 - 0.1 * i as f64,
            beam_width: 10,
            ..SpecGRConfig::default()
        };
        let out = engine.recommend(h, &cfg).unwrap();
        assert!(out.len() <= 10);
        assert!(out.iterations_used <= 4 && out.decode_steps_used <= 4);
        let items: HashSet<usize> = out.items().into_iter().collect();
        assert_eq!(items.len(), out.len());
        let first_fill = out
            .entries
            .iter()
            .position(|e| e.provenance == Provenance::BeamFill)
            .unwrap_or(out.len());
        assert!(out.entries[first_fill..]
            .iter()
            .all(|e| e.provenance == Provenance::BeamFill));
        for w in out.entries[..first_fill].windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for w in out.entries[first_fill..].windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }
}

#[test]
fn greedy_path_item_leads_beam_only() {
    let f = fixture(60, 7);
    let target = 11;
    let scorer = path_scorer(*f.catalog.layout(), f.catalog.tokens(target), vec![-0.1; 4]);
    let engine = Engine::new(&scorer, &f.catalog, &f.index);
    let out = engine.beam_only_recommend(&[0, 1], 5, 5).unwrap();
    assert_eq!(out.entries[0].item, target);
    assert!(matches!(
        engine.beam_only_recommend(&[0], 3, 5),
        Err(EngineError::InvalidConfig(_))
    ));
}

#[test]
fn non_item_paths_leave_the_list_short() {
    // 3 items in a 2-digit path space of 3 x 4 = 12 paths
    let layout = TokenLayout::new(2, 3, 4);
    let sids = vec![vec![0u16, 0], vec![1, 0], vec![2, 0]];
    let catalog = tiny_catalog(layout, sids);
    let uniform = crate::seqmodel::UniformScorer::new(layout.vocab_size());
    let index = DraftIndex::build(&catalog, DraftMode::Auxiliary, None).unwrap();
    let engine = Engine::new(&uniform, &catalog, &index);
    // uniform scores + lexicographic ties keep [0,0],[0,1],[0,2],[0,3]: one item
    let out = engine.beam_only_recommend(&[0], 4, 3).unwrap();
    assert_eq!(out.items(), vec![0]);
    assert!(out.short);
}

fn tiny_catalog(layout: TokenLayout, sids: Vec<Vec<u16>>) -> Catalog {
    let n = sids.len();
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            let a = i as f32;
            vec![a.cos(), a.sin()]
        })
        .collect();
    let books = Codebooks {
        dim: 2,
        codebook_size: layout.codebook_size,
        levels: vec![Matrix::zeros(layout.codebook_size, 2); layout.semantic_levels()],
    };
    Catalog::from_parts(
        (0..n).map(|i| format!("t{i}")).collect(),
        &Matrix::from_rows(&rows),
        vec![true; n],
        sids.into_iter().map(SemanticId::new).collect(),
        books,
        layout,
    )
    .unwrap()
}

#[test]
fn heuristic_mix_degenerate_and_hand_built_cases() {
    let f = fixture(300, 8);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    let h = &f.histories[2];
    let beam = engine.beam_only_recommend(h, 30, 10).unwrap();
    let mix0 = engine.heuristic_mix_recommend(h, 30, 10, 0.0).unwrap();
    assert_eq!(mix0.entries, beam.entries);

    let q = f.index.query(&f.catalog, None, h).unwrap();
    let mut unseen: Vec<(usize, f32)> = (0..f.catalog.len())
        .filter(|&i| !f.catalog.is_seen(i))
        .map(|i| (i, dot(f.index.vectors().row(i), &q)))
        .collect();
    unseen.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mix1 = engine.heuristic_mix_recommend(h, 30, 10, 1.0).unwrap();
    assert_eq!(
        mix1.items(),
        unseen.iter().take(10).map(|u| u.0).collect::<Vec<_>>()
    );

    let mix = engine.heuristic_mix_recommend(h, 30, 10, 0.2).unwrap();
    let beam8 = engine.beam_only_recommend(h, 30, 8).unwrap();
    assert_eq!(&mix.entries[..8], &beam8.entries[..]);
    let tail: Vec<usize> = unseen
        .iter()
        .map(|u| u.0)
        .filter(|i| !beam8.items().contains(i))
        .take(2)
        .collect();
    assert_eq!(mix.items()[8..].to_vec(), tail);
    assert!(mix.entries[8..].iter().all(|e| e.provenance == Provenance::UnseenMix));
}

#[test]
fn subset_rank_cases() {
    let f = fixture(300, 9);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    let h = &f.histories[3];
    let cfg = SpecGRConfig {
        k: 10,
        draft_size: 20,
        threshold: -1.8,
        beam_width: 20,
        ..SpecGRConfig::default()
    };
    let all: Vec<usize> = (0..f.catalog.len()).collect();
    assert_eq!(engine.subset_rank(h, &all, &cfg).unwrap(), engine.recommend(h, &cfg).unwrap());

    let three = [17usize, 150, 42];
    let cfg3 = SpecGRConfig {
        k: 3,
        draft_size: 3,
        threshold: f64::NEG_INFINITY,
        ..cfg.clone()
    };
    let out = engine.subset_rank(h, &three, &cfg3).unwrap();
    assert_eq!(out.items(), exhaustive_top_k(&f, h, &three, 3));

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let mut items = all.clone();
        items.shuffle(&mut rng);
        items.truncate(100);
        let allowed: HashSet<usize> = items.iter().copied().collect();
        let out = engine.subset_rank(h, &items, &cfg).unwrap();
        assert!(out.items().iter().all(|i| allowed.contains(i)));
    }
}

/// Full-path log-probability of every subset item, ranked.
fn exhaustive_path_rank(f: &Fixture, history: &[usize], items: &[usize], k: usize) -> Vec<(usize, f64)> {
    let x = TokenSequence::from_history(&f.catalog, history);
    let mut scored: Vec<(usize, f64)> = items
        .iter()
        .map(|&i| {
            let mut ctx = x.tokens().to_vec();
            let mut total = 0.0;
            for t in f.catalog.tokens(i) {
                total += f.scorer.log_probs(&ctx)[t as usize];
                ctx.push(t);
            }
            (i, total)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

#[test]
fn constrained_beam_single_item_and_exhaustive_subset() {
    let f = fixture(300, 10);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    let h = &f.histories[4];
    let out = engine.constrained_beam_rank(h, &[123], 1, 1).unwrap();
    let expect = exhaustive_path_rank(&f, h, &[123], 1);
    assert_eq!(out.items(), vec![123]);
    assert!((out.entries[0].score - expect[0].1).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut items: Vec<usize> = (0..f.catalog.len()).collect();
    items.shuffle(&mut rng);
    items.truncate(50);
    let out = engine.constrained_beam_rank(h, &items, 50, 50).unwrap();
    let expect = exhaustive_path_rank(&f, h, &items, 50);
    assert_eq!(out.items(), expect.iter().map(|e| e.0).collect::<Vec<_>>());
}

#[test]
fn constrained_beam_over_full_path_space_equals_beam_only() {
    let layout = TokenLayout::new(2, 3, 2);
    let sids: Vec<Vec<u16>> = (0..3u16).flat_map(|a| (0..2u16).map(move |b| vec![a, b])).collect();
    let catalog = tiny_catalog(layout, sids);
    let v = layout.vocab_size();
    let scorer = FnScorer::new(v, move |ctx: &[Token]| {
        // arbitrary but proper distribution depending on the last token
        let last = *ctx.last().unwrap() as f64;
        let w: Vec<f64> = (0..v).map(|t| 1.0 + ((t as f64 * 1.7 + last).sin() + 1.0)).collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|x| (x / z).ln()).collect()
    });
    let index = DraftIndex::build(&catalog, DraftMode::Auxiliary, None).unwrap();
    let engine = Engine::new(&scorer, &catalog, &index);
    let all: Vec<usize> = (0..catalog.len()).collect();
    for h in [vec![0], vec![1, 4], vec![5, 2, 3]] {
        for width in [2, 4, 6] {
            let a = engine.constrained_beam_rank(&h, &all, width, 2).unwrap();
            let b = engine.beam_only_recommend(&h, width, 2).unwrap();
            assert_eq!(a.entries, b.entries);
        }
    }
}

#[test]
fn batch_scoring_matches_exhaustive_verification() {
    let f = fixture(200, 11);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    let h = &f.histories[5];
    let items: Vec<usize> = (0..200).step_by(3).collect();
    let out = engine.batch_score_rank(h, &items, 10, 7).unwrap();
    assert_eq!(out.items(), exhaustive_top_k(&f, h, &items, 10));
}

#[test]
fn invalid_requests() {
    let f = fixture(60, 12);
    let engine = Engine::new(&f.scorer, &f.catalog, &f.index);
    assert!(matches!(
        engine.recommend(&[], &SpecGRConfig::default()),
        Err(EngineError::EmptyHistory)
    ));
    assert!(matches!(
        engine.recommend(&[1000], &SpecGRConfig::default()),
        Err(EngineError::UnknownItem(1000))
    ));
    let bad = SpecGRConfig {
        k: 0,
        ..SpecGRConfig::default()
    };
    assert!(matches!(engine.recommend(&[1], &bad), Err(EngineError::InvalidConfig(_))));
    assert!(engine.heuristic_mix_recommend(&[1], 10, 10, 1.5).is_err());
}
