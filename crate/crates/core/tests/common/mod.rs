#![allow(dead_code)]

pub mod props;

use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use specgr_core::catalog::TokenLayout;
use specgr_core::eval::synthetic::{generate, SyntheticConfig};
use specgr_core::eval::{fit_from_log, Fitted};
use specgr_core::seqmodel::NGramConfig;

/// Seeded runner so every run draws the same cases.
pub fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn fit_synthetic(config: &SyntheticConfig, layout: TokenLayout, seed: u64) -> Fitted {
    let d = generate(config);
    fit_from_log(
        d.item_ids,
        &d.embeddings,
        &d.log,
        d.t_valid,
        d.t_test,
        layout,
        NGramConfig::for_layout(&layout),
        seed,
    )
    .expect("synthetic pipeline")
}

/// Small end-to-end fixture: ~300 items, default layout.
pub fn small_fitted() -> Fitted {
    fit_synthetic(
        &SyntheticConfig {
            num_items: 300,
            num_users: 500,
            num_clusters: 10,
            seed: 21,
            ..Default::default()
        },
        TokenLayout::default(),
        1,
    )
}
