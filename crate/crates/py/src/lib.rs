//! Python module `specgr`: build a recommender from data or a synthetic config,
//! then recommend, score and evaluate with external item ids.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyNotImplementedError, PyValueError};
use pyo3::prelude::*;
use specgr_core::catalog::{read_embeddings, Catalog, CatalogError, TokenLayout};
use specgr_core::drafter::{DraftIndex, DraftMode};
use specgr_core::engine::{Engine, EngineError, RecommendationList, SpecGRConfig};
use specgr_core::eval::synthetic::{generate, SyntheticConfig};
use specgr_core::eval::{
    evaluate, fit_from_log, EvalCase, EvalError, EvalOptions, Interaction, InteractionLog, Method,
    TemporalSplit,
};
use specgr_core::matrix::Matrix;
use specgr_core::seqmodel::{ModelError, NGramConfig, NGramScorer};

fn model_err(e: ModelError) -> PyErr {
    match e {
        ModelError::Unsupported(what) => PyNotImplementedError::new_err(format!("scorer lacks {what}")),
        ModelError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn engine_err(e: EngineError) -> PyErr {
    match e {
        EngineError::Model(m) => model_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn catalog_err(e: CatalogError) -> PyErr {
    match e {
        CatalogError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn eval_err(e: EvalError) -> PyErr {
    match e {
        EvalError::Engine(e) => engine_err(e),
        EvalError::Model(e) => model_err(e),
        EvalError::Catalog(e) => catalog_err(e),
        EvalError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// One ranked list, best first.
#[pyclass(module = "specgr", frozen, get_all)]
pub struct Recommendation {
    pub items: Vec<String>,
    pub scores: Vec<f64>,
    /// "accepted", "beam_fill", "unseen_mix", "scored" or "rejected_fill".
    pub provenance: Vec<String>,
    pub unseen: Vec<bool>,
    pub iterations_used: usize,
    pub decode_steps_used: usize,
    pub short: bool,
}

#[pymethods]
impl Recommendation {
    fn __len__(&self) -> usize {
        self.items.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Recommendation({} items, iterations_used={}, decode_steps_used={})",
            self.items.len(),
            self.iterations_used,
            self.decode_steps_used
        )
    }
}

impl Recommendation {
    fn from_list(catalog: &Catalog, list: RecommendationList) -> Self {
        let mut out = Self {
            items: Vec::with_capacity(list.entries.len()),
            scores: Vec::with_capacity(list.entries.len()),
            provenance: Vec::with_capacity(list.entries.len()),
            unseen: Vec::with_capacity(list.entries.len()),
            iterations_used: list.iterations_used,
            decode_steps_used: list.decode_steps_used,
            short: list.short,
        };
        for e in list.entries {
            out.items.push(catalog.external_id(e.item).to_owned());
            out.scores.push(e.score);
            out.provenance.push(
                serde_json::to_value(e.provenance)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
            );
            out.unseen.push(!catalog.is_seen(e.item));
        }
        out
    }
}

/// Tokenized catalog, fitted scorer, draft index and temporal split.
#[pyclass(module = "specgr", frozen)]
pub struct Recommender {
    catalog: Catalog,
    scorer: NGramScorer,
    index: DraftIndex,
    split: TemporalSplit,
}

fn parse_mode(mode: &str) -> PyResult<DraftMode> {
    mode.parse().map_err(PyValueError::new_err)
}

impl Recommender {
    #[allow(clippy::too_many_arguments)]
    fn build(
        item_ids: Vec<String>,
        embeddings: &Matrix,
        log: &InteractionLog,
        t_valid: i64,
        t_test: i64,
        layout: TokenLayout,
        mode: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let mode = parse_mode(mode)?;
        let fitted = fit_from_log(
            item_ids,
            embeddings,
            log,
            t_valid,
            t_test,
            layout,
            NGramConfig::for_layout(&layout),
            seed,
        )
        .map_err(eval_err)?;
        let index = DraftIndex::build(&fitted.catalog, mode, Some(&fitted.scorer)).map_err(model_err)?;
        Ok(Self {
            catalog: fitted.catalog,
            scorer: fitted.scorer,
            index,
            split: fitted.split,
        })
    }

    fn engine(&self) -> Engine<'_> {
        Engine::new(&self.scorer, &self.catalog, &self.index)
    }

    fn indices(&self, ids: &[String]) -> PyResult<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.catalog
                    .index_of(id)
                    .ok_or_else(|| PyKeyError::new_err(id.clone()))
            })
            .collect()
    }

    fn cases_of(&self, split: &str) -> PyResult<&[EvalCase]> {
        match split {
            "valid" | "validation" => Ok(&self.split.valid),
            "test" => Ok(&self.split.test),
            other => Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        }
    }
}

#[pymethods]
impl Recommender {
    /// `embeddings` has one row per item id; `interactions` holds `(user, item, ts)`.
    #[new]
    #[pyo3(signature = (item_ids, embeddings, interactions, t_valid, t_test, *, digits=4, codebook_size=32, id_vocab=32, mode="auxiliary", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        item_ids: Vec<String>,
        embeddings: Vec<Vec<f32>>,
        interactions: Vec<(String, String, i64)>,
        t_valid: i64,
        t_test: i64,
        digits: usize,
        codebook_size: usize,
        id_vocab: usize,
        mode: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let cols = embeddings.first().map_or(0, Vec::len);
        if embeddings.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("embedding rows differ in length"));
        }
        let matrix = Matrix::from_vec(embeddings.len(), cols, embeddings.concat());
        let log = InteractionLog::new(
            interactions
                .into_iter()
                .map(|(user, item, ts)| Interaction { user, item, ts })
                .collect(),
        );
        let layout = TokenLayout::new(digits, codebook_size, id_vocab);
        Self::build(item_ids, &matrix, &log, t_valid, t_test, layout, mode, seed)
    }

    /// Reads `items.f32` + header JSON and an interaction JSON-lines log.
    #[staticmethod]
    #[pyo3(signature = (embeddings, header, interactions, t_valid, t_test, *, mode="auxiliary", seed=0))]
    fn from_files(
        embeddings: PathBuf,
        header: PathBuf,
        interactions: PathBuf,
        t_valid: i64,
        t_test: i64,
        mode: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let (ids, matrix) = read_embeddings(&embeddings, &header).map_err(catalog_err)?;
        let log = InteractionLog::read_jsonl(&interactions).map_err(eval_err)?;
        Self::build(ids, &matrix, &log, t_valid, t_test, TokenLayout::default(), mode, seed)
    }

    /// Generates seeded synthetic data and fits on it.
    #[staticmethod]
    #[pyo3(signature = (num_items=2000, num_users=3000, num_clusters=40, *, mode="auxiliary", seed=0))]
    fn synthetic(
        num_items: usize,
        num_users: usize,
        num_clusters: usize,
        mode: &str,
        seed: u64,
    ) -> PyResult<Self> {
        if num_items == 0 || num_clusters == 0 {
            return Err(PyValueError::new_err("num_items and num_clusters must be positive"));
        }
        let data = generate(&SyntheticConfig {
            num_items,
            num_users,
            num_clusters,
            seed,
            ..Default::default()
        });
        Self::build(
            data.item_ids,
            &data.embeddings,
            &data.log,
            data.t_valid,
            data.t_test,
            TokenLayout::default(),
            mode,
            seed,
        )
    }

    fn __len__(&self) -> usize {
        self.catalog.len()
    }

    fn __repr__(&self) -> String {
        let l = self.catalog.layout();
        format!(
            "Recommender({} items, layout=({}, {}, {}), mode={})",
            self.catalog.len(),
            l.digits,
            l.codebook_size,
            l.id_vocab,
            self.index.mode()
        )
    }

    #[getter]
    fn item_ids(&self) -> Vec<String> {
        self.catalog.external_ids().to_vec()
    }

    #[getter]
    fn mode(&self) -> String {
        self.index.mode().to_string()
    }

    fn semantic_id(&self, item: String) -> PyResult<Vec<u16>> {
        let i = self.indices(std::slice::from_ref(&item))?[0];
        Ok(self.catalog.semantic_id(i).digits().to_vec())
    }

    fn is_seen(&self, item: String) -> PyResult<bool> {
        let i = self.indices(std::slice::from_ref(&item))?[0];
        Ok(self.catalog.is_seen(i))
    }

    /// Speculative draft-and-verify recommendation.
    #[pyo3(signature = (history, k=10, *, draft_size=50, threshold=-1.6, beam_width=50, guided=true, subset=None))]
    #[allow(clippy::too_many_arguments)]
    fn recommend(
        &self,
        history: Vec<String>,
        k: usize,
        draft_size: usize,
        threshold: f64,
        beam_width: usize,
        guided: bool,
        subset: Option<Vec<String>>,
    ) -> PyResult<Recommendation> {
        let h = self.indices(&history)?;
        let subset = subset.map(|s| self.indices(&s)).transpose()?;
        let config = SpecGRConfig {
            k,
            draft_size,
            threshold,
            beam_width,
            subset,
            max_iterations: None,
            guided,
        };
        let list = self.engine().recommend(&h, &config).map_err(engine_err)?;
        Ok(Recommendation::from_list(&self.catalog, list))
    }

    /// Plain constrained beam search over the full catalog.
    #[pyo3(signature = (history, k=10, beam_width=50))]
    fn beam_only(&self, history: Vec<String>, k: usize, beam_width: usize) -> PyResult<Recommendation> {
        let h = self.indices(&history)?;
        let list = self
            .engine()
            .beam_only_recommend(&h, beam_width, k)
            .map_err(engine_err)?;
        Ok(Recommendation::from_list(&self.catalog, list))
    }

    /// Mean per-digit log-probability of each candidate after `history`.
    fn score(&self, history: Vec<String>, items: Vec<String>) -> PyResult<Vec<f64>> {
        let h = self.indices(&history)?;
        let c = self.indices(&items)?;
        let verified = self
            .engine()
            .verify(&h, &c, f64::NEG_INFINITY)
            .map_err(engine_err)?;
        Ok(verified.into_iter().map(|v| v.score).collect())
    }

    /// `(history, target, target_unseen)` triples of a split.
    #[pyo3(signature = (split="valid"))]
    fn cases(&self, split: &str) -> PyResult<Vec<(Vec<String>, String, bool)>> {
        let ext = |i: usize| self.catalog.external_id(i).to_owned();
        Ok(self
            .cases_of(split)?
            .iter()
            .map(|c| (c.history.iter().map(|&i| ext(i)).collect(), ext(c.target), c.target_unseen))
            .collect())
    }

    /// Evaluation report as a dict. `method` is "specgr", "beam_only" or "heuristic_mix".
    #[pyo3(signature = (split="valid", method="specgr", k=50, cutoffs=None, *, threshold=-1.6, draft_size=50, beam_width=50, limit=None))]
    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &self,
        py: Python<'_>,
        split: &str,
        method: &str,
        k: usize,
        cutoffs: Option<Vec<usize>>,
        threshold: f64,
        draft_size: usize,
        beam_width: usize,
        limit: Option<usize>,
    ) -> PyResult<Py<PyAny>> {
        let cases = self.cases_of(split)?;
        let cases = &cases[..limit.unwrap_or(cases.len()).min(cases.len())];
        let method = match method {
            "specgr" => Method::Specgr(SpecGRConfig {
                k,
                draft_size,
                threshold,
                beam_width,
                ..Default::default()
            }),
            "beam_only" => Method::BeamOnly { beam_width, k },
            "heuristic_mix" => Method::HeuristicMix {
                beam_width,
                k,
                unseen_fraction: TemporalSplit::unseen_share(&self.split.valid),
            },
            other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
        };
        let options = EvalOptions {
            cutoffs: cutoffs.unwrap_or_else(|| vec![k]),
            ..Default::default()
        };
        let report = evaluate(&self.engine(), &method, cases, &options).map_err(eval_err)?;
        let text = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
    }
}

#[pymodule]
fn specgr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Recommender>()?;
    m.add_class::<Recommendation>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
