use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalCase, EvalError, EvalOptions, LatencySummary, Method};
use crate::catalog::Catalog;
use crate::engine::{Engine, EngineError, RecommendationList, SpecGRConfig};
use crate::matrix::{dot, mean_normalized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMethod {
    SubsetRank,
    ConstrainedBeam,
    BatchScoring,
}

impl SubsetMethod {
    pub const ALL: [SubsetMethod; 3] = [
        SubsetMethod::SubsetRank,
        SubsetMethod::ConstrainedBeam,
        SubsetMethod::BatchScoring,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SubsetMethod::SubsetRank => "subset_rank",
            SubsetMethod::ConstrainedBeam => "constrained_beam",
            SubsetMethod::BatchScoring => "batch_scoring",
        }
    }
}

impl fmt::Display for SubsetMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub methods: Vec<SubsetMethod>,
    pub warmup: usize,
    pub repetitions: usize,
    pub k: usize,
    pub draft_size: usize,
    pub threshold: f64,
    pub beam_width: usize,
    pub batch_size: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![10, 100, 1000],
            methods: SubsetMethod::ALL.to_vec(),
            warmup: 5,
            repetitions: 30,
            k: 10,
            draft_size: 50,
            threshold: -1.6,
            beam_width: 50,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: SubsetMethod,
    pub subset_size: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

/// The `size` items closest to the mean of the history's catalog embeddings,
/// standing in for the output of a first-stage retriever.
pub fn retrieval_subset(catalog: &Catalog, history: &[usize], size: usize) -> Vec<usize> {
    let emb = catalog.embeddings();
    let q = mean_normalized(history.iter().map(|&i| emb.row(i)), emb.cols());
    let mut scored: Vec<(usize, f32)> = (0..catalog.len()).map(|i| (i, dot(emb.row(i), &q))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(size);
    scored.into_iter().map(|s| s.0).collect()
}

pub(crate) fn run_subset_method(
    engine: &Engine,
    method: SubsetMethod,
    history: &[usize],
    subset: &[usize],
    config: &BenchConfig,
) -> Result<RecommendationList, EngineError> {
    let k = config.k.min(subset.len()).max(1);
    match method {
        SubsetMethod::SubsetRank => {
            let c = SpecGRConfig {
                k,
                draft_size: config.draft_size,
                threshold: config.threshold,
                beam_width: config.beam_width.max(k),
                ..Default::default()
            };
            engine.subset_rank(history, subset, &c)
        }
        SubsetMethod::ConstrainedBeam => {
            engine.constrained_beam_rank(history, subset, config.beam_width.max(k), k)
        }
        SubsetMethod::BatchScoring => engine.batch_score_rank(history, subset, k, config.batch_size),
    }
}

/// Single-request wall time per method and subset size.
///
/// Request `r` uses `histories[r % len]` with the subset `subset_for(history, size)`,
/// computed before timing starts. The first `warmup` requests are not recorded.
pub fn bench_subset_latency(
    engine: &Engine,
    histories: &[Vec<usize>],
    config: &BenchConfig,
    subset_for: &dyn Fn(&[usize], usize) -> Vec<usize>,
) -> Result<Vec<TimingRow>, EvalError> {
    if histories.is_empty() || config.repetitions == 0 {
        return Err(EvalError::InvalidConfig(
            "benchmark needs histories and at least one repetition".into(),
        ));
    }
    let mut rows = Vec::new();
    for &size in &config.sizes {
        let subsets: Vec<Vec<usize>> = histories.iter().map(|h| subset_for(h, size)).collect();
        for &method in &config.methods {
            let mut samples = Vec::with_capacity(config.repetitions);
            for r in 0..config.warmup + config.repetitions {
                let i = r % histories.len();
                let start = Instant::now();
                let out = run_subset_method(engine, method, &histories[i], &subsets[i], config)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                std::hint::black_box(out);
                if r >= config.warmup {
                    samples.push(ms);
                }
            }
            let s = LatencySummary::from_samples(&samples);
            rows.push(TimingRow {
                method,
                subset_size: size,
                repetitions: s.requests,
                median_ms: s.median_ms,
                p95_ms: s.p95_ms,
                mean_ms: s.mean_ms,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Threshold,
    DraftSize,
    BeamWidth,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::Threshold => "gamma",
            SweepParam::DraftSize => "delta",
            SweepParam::BeamWidth => "beta",
        }
    }

    fn apply(&self, base: &SpecGRConfig, value: f64) -> SpecGRConfig {
        let mut c = base.clone();
        match self {
            SweepParam::Threshold => c.threshold = value,
            SweepParam::DraftSize => c.draft_size = value as usize,
            SweepParam::BeamWidth => c.beam_width = value as usize,
        }
        c
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gamma" | "threshold" => Ok(SweepParam::Threshold),
            "delta" | "draft_size" => Ok(SweepParam::DraftSize),
            "beta" | "beam_width" => Ok(SweepParam::BeamWidth),
            other => Err(format!("unknown sweep parameter {other:?}")),
        }
    }
}

/// One CSV row of a hyperparameter sweep; metrics are at cut-off `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub in_sample_recall: f64,
    pub unseen_recall: f64,
    pub mean_iterations: f64,
    pub mean_decode_steps: f64,
    pub acceptance_rate: f64,
    pub unseen_item_share: f64,
    pub mean_latency_ms: f64,
}

/// Evaluates `base` with one parameter replaced by each of `values`.
pub fn sweep(
    engine: &Engine,
    cases: &[EvalCase],
    base: &SpecGRConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>, EvalError> {
    let options = EvalOptions {
        cutoffs: vec![base.k],
        parallel: false,
        measure_latency: true,
    };
    values
        .iter()
        .map(|&v| {
            let config = param.apply(base, v);
            let k = config.k;
            let report = evaluate(engine, &Method::Specgr(config), cases, &options)?;
            Ok(SweepRow {
                parameter: param.as_str().to_owned(),
                value: v,
                k,
                recall: report.overall.recall[&k],
                ndcg: report.overall.ndcg[&k],
                in_sample_recall: report.in_sample.recall[&k],
                unseen_recall: report.unseen.recall[&k],
                mean_iterations: report.mean_iterations,
                mean_decode_steps: report.mean_decode_steps,
                acceptance_rate: report.acceptance_rate(),
                unseen_item_share: report.unseen_item_share,
                mean_latency_ms: report.latency.as_ref().map_or(f64::NAN, |l| l.mean_ms),
            })
        })
        .collect()
}
