use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use specgr_core::catalog::{
    read_embeddings, read_semantic_id_dump, write_embeddings, write_semantic_id_dump, Catalog,
    Codebooks,
};
use specgr_core::drafter::{DraftIndex, DraftMode};
use specgr_core::engine::{Engine, Provenance};
use specgr_core::eval::synthetic::generate;
use specgr_core::eval::{
    bench_subset_latency, evaluate, format_table, retrieval_subset, sweep, temporal_split,
    training_sequences, BenchConfig, EvalCase, EvalOptions, EvalReport, InteractionLog, Method,
    SweepParam, SweepRow, TemporalSplit,
};
use specgr_core::matrix::Matrix;
use specgr_core::seqmodel::{fit_ngram, NGramScorer};

use crate::config::{Loaded, RunConfig, Stage};
use crate::error::CliError;
use crate::manifest::Manifest;

pub const SEMANTIC_IDS: &str = "semantic_ids.jsonl";
pub const CODEBOOKS: &str = "codebooks.json";
pub const MODEL: &str = "model.ngram";
pub const INDEX_DATA: &str = "index.f32";
pub const INDEX_HEADER: &str = "index.json";

fn ms_since(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e3 * 1000.0).round() / 1000.0
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_log(loaded: &Loaded) -> Result<InteractionLog, CliError> {
    let path = loaded.interactions();
    if !path.exists() {
        return Err(CliError::usage(format!(
            "interaction log {} not found (set paths.interactions)",
            path.display()
        )));
    }
    Ok(InteractionLog::read_jsonl(&path)?)
}

fn read_items(loaded: &Loaded) -> Result<(Vec<String>, Matrix), CliError> {
    let (data, header) = loaded.embeddings();
    for p in [&data, &header] {
        if !p.exists() {
            return Err(CliError::usage(format!(
                "embeddings file {} not found (set paths.embeddings)",
                p.display()
            )));
        }
    }
    Ok(read_embeddings(&data, &header)?)
}

fn record_inputs(m: &mut Manifest, loaded: &Loaded) -> Result<(), CliError> {
    let (data, header) = loaded.embeddings();
    m.add_input(&data)?;
    m.add_input(&header)?;
    m.add_input(&loaded.interactions())
}

fn split_of(config: &RunConfig, log: &InteractionLog, ids: &[String]) -> Result<TemporalSplit, CliError> {
    let split = temporal_split(log, ids, config.split.t_valid, config.split.t_test)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    Ok(split)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))
}

pub fn tokenize(loaded: &Loaded) -> Result<(), CliError> {
    let config = &loaded.config;
    let dir = loaded.artifacts();
    ensure_dir(&dir)?;
    let mut m = Manifest::new("tokenize", config.stage_hash(Stage::Tokenize), config.seed);

    let t = Instant::now();
    let (ids, embeddings) = read_items(loaded)?;
    let log = read_log(loaded)?;
    let split = split_of(config, &log, &ids)?;
    m.durations_ms.insert("load".into(), ms_since(t));

    let t = Instant::now();
    let catalog = Catalog::build(ids, &embeddings, split.seen.clone(), config.layout(), config.seed)?;
    m.durations_ms.insert("tokenize".into(), ms_since(t));

    write_semantic_id_dump(&catalog, &dir.join(SEMANTIC_IDS))?;
    write_json(&dir.join(CODEBOOKS), catalog.codebooks())?;
    record_inputs(&mut m, loaded)?;
    m.outputs = vec![SEMANTIC_IDS.into(), CODEBOOKS.into()];
    let seen = split.seen.iter().filter(|&&s| s).count();
    m.extra = serde_json::json!({
        "items": catalog.len(),
        "seen_items": seen,
        "unseen_items": catalog.len() - seen,
        "warnings": split.warnings,
    });
    m.write(&dir)?;
    println!(
        "tokenized {} items ({} seen) into {}",
        catalog.len(),
        seen,
        dir.join(SEMANTIC_IDS).display()
    );
    Ok(())
}

/// Catalog and split rebuilt from the tokenize artifacts.
struct Tokenized {
    catalog: Catalog,
    split: TemporalSplit,
}

fn load_tokenized(loaded: &Loaded, force: bool) -> Result<Tokenized, CliError> {
    let config = &loaded.config;
    let dir = loaded.artifacts();
    Manifest::require(&dir, Stage::Tokenize, &config.stage_hash(Stage::Tokenize), force)?;
    let (ids, embeddings) = read_items(loaded)?;
    let log = read_log(loaded)?;
    let split = split_of(config, &log, &ids)?;
    let records = read_semantic_id_dump(&dir.join(SEMANTIC_IDS))?;
    if records.len() != ids.len() || records.iter().zip(&ids).any(|(r, id)| &r.id != id) {
        return Err(CliError::data(format!(
            "{} does not match the embeddings header; rerun `specgr tokenize`",
            dir.join(SEMANTIC_IDS).display()
        )));
    }
    let codebooks: Codebooks = serde_json::from_slice(&std::fs::read(dir.join(CODEBOOKS))?)?;
    let catalog = Catalog::from_parts(
        ids,
        &embeddings,
        records.iter().map(|r| r.seen).collect(),
        records.iter().map(|r| r.semantic_id()).collect(),
        codebooks,
        config.layout(),
    )?;
    Ok(Tokenized { catalog, split })
}

pub fn fit(loaded: &Loaded, force: bool) -> Result<(), CliError> {
    let config = &loaded.config;
    let dir = loaded.artifacts();
    let mut m = Manifest::new("fit", config.stage_hash(Stage::Fit), config.seed);
    let t = Instant::now();
    let tok = load_tokenized(loaded, force)?;
    m.durations_ms.insert("load".into(), ms_since(t));

    let t = Instant::now();
    let sequences = training_sequences(&tok.catalog, &tok.split);
    let scorer = fit_ngram(&sequences, tok.catalog.layout(), config.ngram())?;
    m.durations_ms.insert("fit".into(), ms_since(t));

    scorer.save(&dir.join(MODEL))?;
    m.add_input(&dir.join(SEMANTIC_IDS))?;
    m.add_input(&dir.join(CODEBOOKS))?;
    m.add_input(&loaded.interactions())?;
    m.outputs = vec![MODEL.into()];
    m.extra = serde_json::json!({
        "sequences": sequences.len(),
        "contexts": scorer.num_contexts(),
        "order": scorer.config().order,
    });
    m.write(&dir)?;
    println!(
        "fitted order-{} scorer on {} sequences into {}",
        scorer.config().order,
        sequences.len(),
        dir.join(MODEL).display()
    );
    Ok(())
}

fn load_scorer(loaded: &Loaded, force: bool) -> Result<NGramScorer, CliError> {
    let dir = loaded.artifacts();
    Manifest::require(&dir, Stage::Fit, &loaded.config.stage_hash(Stage::Fit), force)?;
    Ok(NGramScorer::load(&dir.join(MODEL))?)
}

pub fn index(loaded: &Loaded, force: bool) -> Result<(), CliError> {
    let config = &loaded.config;
    let dir = loaded.artifacts();
    let mut m = Manifest::new("index", config.stage_hash(Stage::Index), config.seed);
    let t = Instant::now();
    let tok = load_tokenized(loaded, force)?;
    let scorer = load_scorer(loaded, force)?;
    m.durations_ms.insert("load".into(), ms_since(t));

    let t = Instant::now();
    let index = DraftIndex::build(&tok.catalog, config.engine.mode, Some(&scorer))?;
    m.durations_ms.insert("index".into(), ms_since(t));

    write_embeddings(
        &dir.join(INDEX_DATA),
        &dir.join(INDEX_HEADER),
        tok.catalog.external_ids(),
        index.vectors(),
    )?;
    m.add_input(&dir.join(SEMANTIC_IDS))?;
    m.add_input(&dir.join(MODEL))?;
    m.outputs = vec![INDEX_DATA.into(), INDEX_HEADER.into()];
    m.extra = serde_json::json!({ "mode": config.engine.mode, "dim": index.vectors().cols() });
    m.write(&dir)?;
    println!(
        "built {} draft index ({} x {}) in {}",
        config.engine.mode,
        index.len(),
        index.vectors().cols(),
        dir.join(INDEX_DATA).display()
    );
    Ok(())
}

/// Everything a request needs.
struct Pipeline {
    tok: Tokenized,
    scorer: NGramScorer,
    index: DraftIndex,
}

impl Pipeline {
    fn load(loaded: &Loaded, force: bool) -> Result<Self, CliError> {
        let dir = loaded.artifacts();
        let manifest = Manifest::require(&dir, Stage::Index, &loaded.config.stage_hash(Stage::Index), force)?;
        let tok = load_tokenized(loaded, force)?;
        let scorer = load_scorer(loaded, force)?;
        let (ids, vectors) = read_embeddings(&dir.join(INDEX_DATA), &dir.join(INDEX_HEADER))?;
        if ids != tok.catalog.external_ids() {
            return Err(CliError::data(format!(
                "{} does not match the catalog; rerun `specgr index`",
                dir.join(INDEX_HEADER).display()
            )));
        }
        // the index was built in the mode recorded in its manifest, which may differ under --force
        let mode = manifest
            .extra
            .get("mode")
            .and_then(|v| serde_json::from_value::<DraftMode>(v.clone()).ok())
            .unwrap_or(loaded.config.engine.mode);
        Ok(Self {
            tok,
            scorer,
            index: DraftIndex::from_vectors(mode, vectors),
        })
    }

    fn engine(&self) -> Engine<'_> {
        Engine::new(&self.scorer, &self.tok.catalog, &self.index)
    }
}

#[derive(Serialize)]
struct RecommendedItem {
    id: String,
    score: f64,
    provenance: Provenance,
    unseen: bool,
}

#[derive(Serialize)]
struct RecommendOutput {
    history: Vec<String>,
    k: usize,
    iterations_used: usize,
    decode_steps_used: usize,
    short: bool,
    items: Vec<RecommendedItem>,
}

/// Where the request history comes from.
pub enum HistorySource {
    Ids(Vec<String>),
    User(String),
    Stdin,
}

fn parse_history_text(text: &str) -> Result<Vec<String>, CliError> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed)
            .map_err(|e| CliError::data(format!("stdin history: {e}")));
    }
    Ok(trimmed
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect())
}

pub fn recommend(
    loaded: &Loaded,
    force: bool,
    source: HistorySource,
    k: Option<usize>,
) -> Result<(), CliError> {
    let config = &loaded.config;
    let ids: Vec<String> = match source {
        HistorySource::Ids(ids) => ids.into_iter().filter(|s| !s.trim().is_empty()).collect(),
        HistorySource::Stdin => {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text)?;
            parse_history_text(&text)?
        }
        HistorySource::User(user) => {
            let log = read_log(loaded)?;
            let by_user = log.by_user();
            let records = by_user
                .get(user.as_str())
                .ok_or_else(|| CliError::usage(format!("user {user:?} not in the interaction log")))?;
            records.iter().map(|r| r.item.clone()).collect()
        }
    };
    if ids.is_empty() {
        return Err(CliError::usage("history is empty"));
    }
    let pipeline = Pipeline::load(loaded, force)?;
    let catalog = &pipeline.tok.catalog;
    let mut history = Vec::with_capacity(ids.len());
    for id in &ids {
        history.push(
            catalog
                .index_of(id)
                .ok_or_else(|| CliError::data(format!("history item {id:?} not in catalog")))?,
        );
    }
    let spec = config.spec_config(k.unwrap_or(config.engine.k));
    spec.validate()?;
    let list = pipeline.engine().recommend(&history, &spec)?;
    let out = RecommendOutput {
        history: ids,
        k: spec.k,
        iterations_used: list.iterations_used,
        decode_steps_used: list.decode_steps_used,
        short: list.short,
        items: list
            .entries
            .iter()
            .map(|e| RecommendedItem {
                id: catalog.external_id(e.item).to_owned(),
                score: e.score,
                provenance: e.provenance,
                unseen: !catalog.is_seen(e.item),
            })
            .collect(),
    };
    emit(&(serde_json::to_string_pretty(&out)? + "\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Valid,
    Test,
}

impl SplitName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "valid" | "validation" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split {other:?} (expected valid|test)")),
        }
    }
}

fn methods_for(config: &RunConfig, split: &TemporalSplit) -> Result<Vec<Method>, CliError> {
    let k = config
        .eval
        .cutoffs
        .iter()
        .copied()
        .max()
        .unwrap_or(config.engine.k)
        .max(config.engine.k);
    let unseen_fraction = config
        .engine
        .unseen_fraction
        .unwrap_or_else(|| TemporalSplit::unseen_share(&split.valid));
    config
        .eval
        .methods
        .iter()
        .map(|name| match name.as_str() {
            "specgr" => Ok(Method::Specgr(config.spec_config(k))),
            "beam_only" => Ok(Method::BeamOnly {
                beam_width: config.engine.beam_width,
                k,
            }),
            "heuristic_mix" => Ok(Method::HeuristicMix {
                beam_width: config.engine.beam_width,
                k,
                unseen_fraction,
            }),
            other => Err(CliError::usage(format!(
                "unknown method {other:?} (expected specgr|beam_only|heuristic_mix)"
            ))),
        })
        .collect()
}

pub fn evaluate_cmd(loaded: &Loaded, force: bool, which: SplitName) -> Result<(), CliError> {
    let config = &loaded.config;
    let dir = loaded.artifacts();
    let mut m = Manifest::new(
        &format!("evaluate_{}", which.as_str()),
        config.stage_hash(Stage::Index),
        config.seed,
    );
    let t = Instant::now();
    let pipeline = Pipeline::load(loaded, force)?;
    m.durations_ms.insert("load".into(), ms_since(t));
    let split = &pipeline.tok.split;
    let cases: &[EvalCase] = match which {
        SplitName::Valid => &split.valid,
        SplitName::Test => &split.test,
    };
    if cases.is_empty() {
        return Err(CliError::usage(format!("{} split has no cases", which.as_str())));
    }
    let methods = methods_for(config, split)?;
    let engine = pipeline.engine();
    let options = EvalOptions {
        cutoffs: config.eval.cutoffs.clone(),
        parallel: true,
        measure_latency: false,
    };
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    let mut timing = BTreeMap::new();
    for method in &methods {
        let t = Instant::now();
        let report = evaluate(&engine, method, cases, &options)?;
        m.durations_ms.insert(method.name().into(), ms_since(t));
        let name = format!("report_{}_{}.json", which.as_str(), method.name());
        write_json(&dir.join(&name), &report)?;
        m.outputs.push(name);
        if config.eval.measure_latency {
            let timed = evaluate(
                &engine,
                method,
                cases,
                &EvalOptions {
                    measure_latency: true,
                    parallel: false,
                    ..options.clone()
                },
            )?;
            timing.insert(method.name(), timed.latency);
        }
        reports.push((method.name().to_owned(), report));
    }
    let table = format_table(
        &reports
            .iter()
            .map(|(n, r)| (n.as_str(), r))
            .collect::<Vec<_>>(),
    );
    let table_name = format!("table_{}.txt", which.as_str());
    std::fs::write(dir.join(&table_name), &table)?;
    m.outputs.push(table_name);
    if config.eval.measure_latency {
        let name = format!("timing_{}.json", which.as_str());
        write_json(&dir.join(&name), &timing)?;
        m.outputs.push(name);
    }
    m.add_input(&dir.join(MODEL))?;
    m.add_input(&dir.join(INDEX_DATA))?;
    m.extra = serde_json::json!({
        "cases": cases.len(),
        "unseen_share": TemporalSplit::unseen_share(cases),
    });
    m.write(&dir)?;
    emit(&table)
}

pub struct BenchArgs {
    pub sweeps: Vec<SweepParam>,
    pub latency: bool,
}

pub fn bench(loaded: &Loaded, force: bool, args: &BenchArgs) -> Result<(), CliError> {
    let config = &loaded.config;
    let b = &config.bench;
    let dir = loaded.artifacts();
    let mut m = Manifest::new("bench", config.stage_hash(Stage::Index), config.seed);
    let pipeline = Pipeline::load(loaded, force)?;
    let engine = pipeline.engine();
    let valid = &pipeline.tok.split.valid;
    let cases = &valid[..valid.len().min(b.cases)];
    if cases.is_empty() {
        return Err(CliError::usage("validation split has no cases to benchmark"));
    }
    let base = config.spec_config(config.engine.k);
    base.validate()?;

    if !args.sweeps.is_empty() {
        let t = Instant::now();
        let mut rows: Vec<SweepRow> = Vec::new();
        for &param in &args.sweeps {
            let values: Vec<f64> = match param {
                SweepParam::Threshold => b.gammas.clone(),
                SweepParam::DraftSize => b.deltas.iter().map(|&v| v as f64).collect(),
                SweepParam::BeamWidth => b.betas.iter().map(|&v| v as f64).collect(),
            };
            rows.extend(sweep(&engine, cases, &base, param, &values)?);
        }
        let mut w = csv::Writer::from_path(dir.join("bench_sweep.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        m.outputs.push("bench_sweep.csv".into());
        m.durations_ms.insert("sweep".into(), ms_since(t));
    }

    if args.latency {
        let t = Instant::now();
        let bench_config = BenchConfig {
            sizes: b.subset_sizes.clone(),
            warmup: b.warmup,
            repetitions: b.repetitions,
            k: config.engine.k,
            draft_size: config.engine.draft_size,
            threshold: config.engine.threshold,
            beam_width: config.engine.beam_width,
            batch_size: b.batch_size,
            ..Default::default()
        };
        let histories: Vec<Vec<usize>> = cases.iter().map(|c| c.history.clone()).collect();
        let catalog = &pipeline.tok.catalog;
        let rows = bench_subset_latency(&engine, &histories, &bench_config, &|h, n| {
            retrieval_subset(catalog, h, n)
        })?;
        let mut w = csv::Writer::from_path(dir.join("bench_latency.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        m.outputs.push("bench_latency.csv".into());
        m.durations_ms.insert("latency".into(), ms_since(t));
    }
    m.add_input(&dir.join(MODEL))?;
    m.add_input(&dir.join(INDEX_DATA))?;
    m.extra = serde_json::json!({ "cases": cases.len() });
    m.write(&dir)?;
    for o in &m.outputs {
        println!("wrote {}", dir.join(o).display());
    }
    Ok(())
}

/// Writes a synthetic dataset plus a ready-to-run config into `out`.
pub fn synth(loaded: &Loaded, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let mut config = loaded.config.clone();
    let data = generate(&config.synth);
    data.log.write_jsonl(&out.join("interactions.jsonl"))?;
    write_embeddings(
        &out.join("items.f32"),
        &out.join("items.json"),
        &data.item_ids,
        &data.embeddings,
    )?;
    config.paths.interactions = "interactions.jsonl".into();
    config.paths.embeddings = "items.f32".into();
    config.paths.embeddings_header = Some("items.json".into());
    config.paths.artifacts = "artifacts".into();
    config.split.t_valid = data.t_valid;
    config.split.t_test = data.t_test;
    let text = toml::to_string(&config)
        .map_err(|e| CliError::usage(format!("cannot serialize config: {e}")))?;
    std::fs::write(out.join("specgr.toml"), text)?;
    println!(
        "wrote {} items and {} interactions to {} (t_valid={}, t_test={})",
        data.item_ids.len(),
        data.log.records.len(),
        out.display(),
        data.t_valid,
        data.t_test
    );
    Ok(())
}
