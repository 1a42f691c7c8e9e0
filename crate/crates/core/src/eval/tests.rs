use super::synthetic::{generate, SyntheticConfig};
use super::*;
use crate::drafter::{DraftIndex, DraftMode};

fn fitted() -> Fitted {
    let data = generate(&SyntheticConfig {
        num_items: 400,
        num_users: 600,
        num_clusters: 12,
        seed: 11,
        ..Default::default()
    });
    let layout = TokenLayout::default();
    fit_from_log(
        data.item_ids,
        &data.embeddings,
        &data.log,
        data.t_valid,
        data.t_test,
        layout,
        NGramConfig::for_layout(&layout),
        5,
    )
    .unwrap()
}

fn sequential() -> EvalOptions {
    EvalOptions {
        cutoffs: vec![10],
        parallel: false,
        measure_latency: false,
    }
}

#[test]
fn single_case_hit_at_rank_one() {
    let f = fitted();
    let index = DraftIndex::build(&f.catalog, DraftMode::Auxiliary, None).unwrap();
    let engine = Engine::new(&f.scorer, &f.catalog, &index);
    let case = f.split.valid[0].clone();
    let method = Method::BeamOnly { beam_width: 10, k: 10 };
    let top = method.run(&engine, &case.history).unwrap().items()[0];
    let hit = EvalCase { target: top, ..case };
    let r = evaluate(&engine, &method, &[hit], &sequential()).unwrap();
    assert_eq!(r.overall.recall[&10], 1.0);
    assert_eq!(r.overall.ndcg[&10], 1.0);
}

#[test]
fn duplicated_case_matches_single() {
    let f = fitted();
    let index = DraftIndex::build(&f.catalog, DraftMode::Auxiliary, None).unwrap();
    let engine = Engine::new(&f.scorer, &f.catalog, &index);
    let method = Method::Specgr(SpecGRConfig::default());
    let case = f.split.valid[3].clone();
    let one = evaluate(&engine, &method, std::slice::from_ref(&case), &sequential()).unwrap();
    let ten = evaluate(&engine, &method, &vec![case; 10], &EvalOptions {
        cutoffs: vec![10],
        ..Default::default()
    })
    .unwrap();
    assert_eq!((one.overall.cases, ten.overall.cases), (1, 10));
    // a mean of ten equal floats can differ from the value in the last bit
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    assert!(close(one.overall.recall[&10], ten.overall.recall[&10]));
    assert!(close(one.overall.ndcg[&10], ten.overall.ndcg[&10]));
    assert!(close(one.mean_decode_steps, ten.mean_decode_steps));
    assert!(close(one.mean_iterations, ten.mean_iterations));
}

#[test]
fn overall_is_case_weighted_mix_and_parallel_is_deterministic() {
    let f = fitted();
    let index = DraftIndex::build(&f.catalog, DraftMode::Auxiliary, None).unwrap();
    let engine = Engine::new(&f.scorer, &f.catalog, &index);
    let cases = &f.split.valid[..f.split.valid.len().min(150)];
    assert!(cases.iter().any(|c| c.target_unseen) && cases.iter().any(|c| !c.target_unseen));
    let method = Method::Specgr(SpecGRConfig {
        k: 20,
        ..Default::default()
    });
    let opts = EvalOptions {
        cutoffs: vec![10, 20],
        ..Default::default()
    };
    let r = evaluate(&engine, &method, cases, &opts).unwrap();
    assert_eq!(r.in_sample.cases + r.unseen.cases, cases.len());
    let n = cases.len() as f64;
    for k in [10, 20] {
        for (o, i, u) in [
            (&r.overall.recall, &r.in_sample.recall, &r.unseen.recall),
            (&r.overall.ndcg, &r.in_sample.ndcg, &r.unseen.ndcg),
        ] {
            let mix = (r.in_sample.cases as f64 * i[&k] + r.unseen.cases as f64 * u[&k]) / n;
            assert!((o[&k] - mix).abs() <= 1e-12);
            assert!((0.0..=1.0).contains(&o[&k]));
        }
    }
    let again = evaluate(&engine, &method, cases, &EvalOptions { parallel: false, ..opts }).unwrap();
    assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    assert!(r.acceptance.iter().all(|a| a.accepted <= a.drafted));
    assert!(r.acceptance.len() <= f.catalog.layout().digits);
}

#[test]
fn cutoff_above_k_is_rejected() {
    let f = fitted();
    let index = DraftIndex::build(&f.catalog, DraftMode::Auxiliary, None).unwrap();
    let engine = Engine::new(&f.scorer, &f.catalog, &index);
    let err = evaluate(
        &engine,
        &Method::BeamOnly { beam_width: 10, k: 10 },
        &f.split.valid[..1],
        &EvalOptions::default(),
    );
    assert!(matches!(err, Err(EvalError::InvalidConfig(_))));
}

#[test]
fn table_has_three_groups() {
    let f = fitted();
    let index = DraftIndex::build(&f.catalog, DraftMode::Auxiliary, None).unwrap();
    let engine = Engine::new(&f.scorer, &f.catalog, &index);
    let cases = &f.split.valid[..20];
    let a = evaluate(&engine, &Method::Specgr(SpecGRConfig { k: 50, ..Default::default() }), cases, &EvalOptions::default()).unwrap();
    let b = evaluate(&engine, &Method::BeamOnly { beam_width: 50, k: 50 }, cases, &EvalOptions::default()).unwrap();
    let t = format_table(&[("specgr", &a), ("beam_only", &b)]);
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].contains("In-Sample") && lines[0].contains("Unseen") && lines[0].contains("Overall"));
    assert_eq!(lines[1].matches("R@50").count(), 3);
    assert!(lines[4].starts_with("beam_only"));
}

#[test]
fn quantiles() {
    let s = LatencySummary::from_samples(&[5.0, 1.0, 3.0, 2.0, 4.0]);
    assert_eq!(s.median_ms, 3.0);
    assert_eq!(s.mean_ms, 3.0);
    assert!((s.p95_ms - 4.8).abs() < 1e-12);
}

#[test]
fn subset_of_one_agrees_across_methods() {
    let f = fitted();
    let index = DraftIndex::build(&f.catalog, DraftMode::Auxiliary, None).unwrap();
    let engine = Engine::new(&f.scorer, &f.catalog, &index);
    let config = BenchConfig::default();
    for case in &f.split.valid[..10] {
        let subset = retrieval_subset(&f.catalog, &case.history, 1);
        for m in SubsetMethod::ALL {
            let out = bench::run_subset_method(&engine, m, &case.history, &subset, &config).unwrap();
            assert_eq!(out.items(), subset, "{m}");
        }
    }
    let rows = bench_subset_latency(
        &engine,
        &[f.split.valid[0].history.clone()],
        &BenchConfig {
            sizes: vec![1, 5],
            warmup: 1,
            repetitions: 3,
            ..Default::default()
        },
        &|h: &[usize], n: usize| retrieval_subset(&f.catalog, h, n),
    )
    .unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.repetitions == 3 && r.median_ms <= r.p95_ms));
}

#[test]
fn gamma_sweep_decode_steps_non_increasing() {
    let f = fitted();
    let index = DraftIndex::build(&f.catalog, DraftMode::Auxiliary, None).unwrap();
    let engine = Engine::new(&f.scorer, &f.catalog, &index);
    let rows = sweep(
        &engine,
        &f.split.valid[..60],
        &SpecGRConfig::default(),
        SweepParam::Threshold,
        &[-1.4, -1.5, -1.6, -1.7, -1.8],
    )
    .unwrap();
    assert!(rows.windows(2).all(|w| w[1].mean_decode_steps <= w[0].mean_decode_steps));
}
