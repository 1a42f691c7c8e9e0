//! Temporal splits, ranking metrics, evaluation reports and latency benchmarks.

mod bench;
mod metrics;
mod split;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::{
    bench_subset_latency, retrieval_subset, sweep, BenchConfig, SubsetMethod, SweepParam,
    SweepRow, TimingRow,
};
pub use metrics::{ndcg_at_k, recall_at_k};
pub use split::{temporal_split, EvalCase, Interaction, InteractionLog, TemporalSplit};

use crate::catalog::{Catalog, CatalogError, TokenLayout};
use crate::engine::{Engine, EngineError, RecommendationList, SpecGRConfig};
use crate::matrix::Matrix;
use crate::seqmodel::{fit_ngram, ModelError, NGramConfig, NGramScorer, TokenSequence};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("item {0:?} not in catalog")]
    UnknownItem(String),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Training sequences for the scorer, one per user, untruncated.
pub fn training_sequences(catalog: &Catalog, split: &TemporalSplit) -> Vec<TokenSequence> {
    split
        .train
        .iter()
        .map(|(_, items)| {
            TokenSequence::from_digit_rows(
                catalog.layout(),
                items.iter().map(|&i| catalog.semantic_id(i).digits()),
            )
        })
        .collect()
}

/// Catalog, fitted scorer and split built from raw data in one go.
pub struct Fitted {
    pub catalog: Catalog,
    pub scorer: NGramScorer,
    pub split: TemporalSplit,
}

/// Splits `log`, tokenizes the catalog with training items marked seen, and fits
/// the n-gram scorer on the training sequences.
#[allow(clippy::too_many_arguments)]
pub fn fit_from_log(
    item_ids: Vec<String>,
    embeddings: &Matrix,
    log: &InteractionLog,
    t_valid: i64,
    t_test: i64,
    layout: TokenLayout,
    ngram: NGramConfig,
    seed: u64,
) -> Result<Fitted, EvalError> {
    let split = temporal_split(log, &item_ids, t_valid, t_test)?;
    let catalog = Catalog::build(item_ids, embeddings, split.seen.clone(), layout, seed)?;
    let scorer = fit_ngram(&training_sequences(&catalog, &split), &layout, ngram)?;
    Ok(Fitted {
        catalog,
        scorer,
        split,
    })
}

/// Recommendation method under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Specgr(SpecGRConfig),
    BeamOnly {
        beam_width: usize,
        k: usize,
    },
    HeuristicMix {
        beam_width: usize,
        k: usize,
        unseen_fraction: f64,
    },
}

impl Method {
    pub fn k(&self) -> usize {
        match self {
            Method::Specgr(c) => c.k,
            Method::BeamOnly { k, .. } | Method::HeuristicMix { k, .. } => *k,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Specgr(_) => "specgr",
            Method::BeamOnly { .. } => "beam_only",
            Method::HeuristicMix { .. } => "heuristic_mix",
        }
    }

    pub fn run(&self, engine: &Engine, history: &[usize]) -> Result<RecommendationList, EngineError> {
        match self {
            Method::Specgr(c) => engine.recommend(history, c),
            Method::BeamOnly { beam_width, k } => engine.beam_only_recommend(history, *beam_width, *k),
            Method::HeuristicMix {
                beam_width,
                k,
                unseen_fraction,
            } => engine.heuristic_mix_recommend(history, *beam_width, *k, *unseen_fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub cutoffs: Vec<usize>,
    /// Fan out across cases with rayon.
    pub parallel: bool,
    /// Time every request on the calling thread (forces sequential execution).
    pub measure_latency: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cutoffs: vec![10, 50],
            parallel: true,
            measure_latency: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub cases: usize,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationAcceptance {
    pub iteration: usize,
    pub drafted: usize,
    pub accepted: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub requests: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl LatencySummary {
    pub fn from_samples(samples_ms: &[f64]) -> Self {
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            requests: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len().max(1) as f64,
            median_ms: quantile(&s, 0.5),
            p95_ms: quantile(&s, 0.95),
        }
    }
}

/// Linear-interpolation quantile of sorted samples.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub cutoffs: Vec<usize>,
    pub overall: SubsetMetrics,
    pub in_sample: SubsetMetrics,
    pub unseen: SubsetMetrics,
    pub mean_iterations: f64,
    pub mean_decode_steps: f64,
    /// Share of returned items that were absent from training.
    pub unseen_item_share: f64,
    pub short_lists: usize,
    pub acceptance: Vec<IterationAcceptance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencySummary>,
}

impl EvalReport {
    /// Overall draft acceptance across every iteration.
    pub fn acceptance_rate(&self) -> f64 {
        let drafted: usize = self.acceptance.iter().map(|a| a.drafted).sum();
        let accepted: usize = self.acceptance.iter().map(|a| a.accepted).sum();
        if drafted == 0 {
            0.0
        } else {
            accepted as f64 / drafted as f64
        }
    }
}

struct CaseOutcome {
    items: Vec<usize>,
    unseen_target: bool,
    iterations: usize,
    decode_steps: usize,
    short: bool,
    per_iteration: Vec<(usize, usize)>,
    millis: f64,
}

fn run_case(engine: &Engine, method: &Method, case: &EvalCase) -> Result<CaseOutcome, EngineError> {
    let start = Instant::now();
    let list = method.run(engine, &case.history)?;
    let millis = start.elapsed().as_secs_f64() * 1e3;
    Ok(CaseOutcome {
        items: list.items(),
        unseen_target: case.target_unseen,
        iterations: list.iterations_used,
        decode_steps: list.decode_steps_used,
        short: list.short,
        per_iteration: list
            .trace
            .iter()
            .map(|t| (t.candidates.len(), t.accepted()))
            .collect(),
        millis,
    })
}

/// Runs `method` on every case and aggregates the metrics.
///
/// Case order never affects the result; with `parallel` the cases are spread over
/// the rayon pool and gathered back in input order.
pub fn evaluate(
    engine: &Engine,
    method: &Method,
    cases: &[EvalCase],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if let Some(&c) = options.cutoffs.iter().find(|&&c| c == 0 || c > method.k()) {
        return Err(EvalError::InvalidConfig(format!(
            "cut-off {c} outside 1..={}",
            method.k()
        )));
    }
    let outcomes: Vec<CaseOutcome> = if options.parallel && !options.measure_latency {
        cases
            .par_iter()
            .map(|c| run_case(engine, method, c))
            .collect::<Result<_, _>>()?
    } else {
        cases
            .iter()
            .map(|c| run_case(engine, method, c))
            .collect::<Result<_, _>>()?
    };

    let catalog = engine.catalog();
    let mut sums: [BTreeMap<usize, (f64, f64)>; 2] = Default::default();
    let mut counts = [0usize; 2];
    let (mut iterations, mut steps, mut unseen_share, mut short) = (0usize, 0usize, 0.0, 0usize);
    let mut acceptance: Vec<(usize, usize)> = Vec::new();
    for (case, out) in cases.iter().zip(&outcomes) {
        let g = out.unseen_target as usize;
        counts[g] += 1;
        for &k in &options.cutoffs {
            let e = sums[g].entry(k).or_default();
            e.0 += recall_at_k(&out.items, case.target, k);
            e.1 += ndcg_at_k(&out.items, case.target, k);
        }
        iterations += out.iterations;
        steps += out.decode_steps;
        short += out.short as usize;
        if !out.items.is_empty() {
            unseen_share += out.items.iter().filter(|&&i| !catalog.is_seen(i)).count() as f64
                / out.items.len() as f64;
        }
        for (j, &(d, a)) in out.per_iteration.iter().enumerate() {
            if acceptance.len() <= j {
                acceptance.push((0, 0));
            }
            acceptance[j].0 += d;
            acceptance[j].1 += a;
        }
    }

    let subset = |groups: &[usize]| {
        let n: usize = groups.iter().map(|&g| counts[g]).sum();
        let mut m = SubsetMetrics {
            cases: n,
            ..Default::default()
        };
        for &k in &options.cutoffs {
            let (r, d) = groups.iter().fold((0.0, 0.0), |acc, &g| {
                let s = sums[g].get(&k).copied().unwrap_or_default();
                (acc.0 + s.0, acc.1 + s.1)
            });
            let denom = n.max(1) as f64;
            m.recall.insert(k, r / denom);
            m.ndcg.insert(k, d / denom);
        }
        m
    };
    let n = cases.len().max(1) as f64;
    let latency = options.measure_latency.then(|| {
        LatencySummary::from_samples(&outcomes.iter().map(|o| o.millis).collect::<Vec<_>>())
    });
    Ok(EvalReport {
        method: method.clone(),
        cutoffs: options.cutoffs.clone(),
        overall: subset(&[0, 1]),
        in_sample: subset(&[0]),
        unseen: subset(&[1]),
        mean_iterations: iterations as f64 / n,
        mean_decode_steps: steps as f64 / n,
        unseen_item_share: unseen_share / n,
        short_lists: short,
        acceptance: acceptance
            .into_iter()
            .enumerate()
            .map(|(j, (d, a))| IterationAcceptance {
                iteration: j + 1,
                drafted: d,
                accepted: a,
                rate: if d == 0 { 0.0 } else { a as f64 / d as f64 },
            })
            .collect(),
        latency,
    })
}

/// Plain-text table: one row per report, Recall/NDCG at every cut-off for the
/// in-sample, unseen and overall subsets.
pub fn format_table(reports: &[(&str, &EvalReport)]) -> String {
    let cutoffs: Vec<usize> = reports
        .first()
        .map(|r| r.1.cutoffs.clone())
        .unwrap_or_default();
    let name_w = reports.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
    let cols: Vec<String> = cutoffs
        .iter()
        .flat_map(|k| [format!("R@{k}"), format!("N@{k}")])
        .collect();
    let group_w = cols.len() * 9 - 1;
    let mut out = String::new();
    let _ = write!(out, "{:name_w$}", "Model");
    for g in ["In-Sample", "Unseen", "Overall"] {
        let _ = write!(out, " | {g:^group_w$}");
    }
    out.push('\n');
    let _ = write!(out, "{:name_w$}", "");
    for _ in 0..3 {
        out.push_str(" |");
        for c in &cols {
            let _ = write!(out, " {c:>8}");
        }
    }
    out.push('\n');
    out.push_str(&"-".repeat(name_w + 3 * (group_w + 3)));
    out.push('\n');
    for (name, r) in reports {
        let _ = write!(out, "{name:name_w$}");
        for m in [&r.in_sample, &r.unseen, &r.overall] {
            out.push_str(" |");
            for k in &cutoffs {
                let rec = m.recall.get(k).copied().unwrap_or(f64::NAN);
                let nd = m.ndcg.get(k).copied().unwrap_or(f64::NAN);
                let _ = write!(out, " {rec:>8.4} {nd:>8.4}");
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests;
