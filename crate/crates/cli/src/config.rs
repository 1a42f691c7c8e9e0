//! Run configuration: one TOML file plus `--set section.key=value` overrides.
//!
//! Relative paths are resolved against the directory of the config file (or the
//! working directory when no file is given).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use specgr_core::catalog::TokenLayout;
use specgr_core::drafter::DraftMode;
use specgr_core::engine::SpecGRConfig;
use specgr_core::eval::synthetic::SyntheticConfig;
use specgr_core::seqmodel::NGramConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub interactions: PathBuf,
    pub embeddings: PathBuf,
    /// Defaults to the embeddings path with a `.json` extension.
    pub embeddings_header: Option<PathBuf>,
    pub artifacts: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            interactions: "interactions.jsonl".into(),
            embeddings: "items.f32".into(),
            embeddings_header: None,
            artifacts: "artifacts".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub digits: usize,
    pub codebook_size: usize,
    pub id_vocab: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        let l = TokenLayout::default();
        Self {
            digits: l.digits,
            codebook_size: l.codebook_size,
            id_vocab: l.id_vocab,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSection {
    /// Defaults to two items of context plus one token.
    pub order: Option<usize>,
    pub smoothing: f64,
    pub embedding_dim: usize,
}

impl Default for ScorerSection {
    fn default() -> Self {
        Self {
            order: None,
            smoothing: 0.1,
            embedding_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub k: usize,
    pub draft_size: usize,
    pub threshold: f64,
    pub beam_width: usize,
    pub mode: DraftMode,
    pub guided: bool,
    /// Share of unseen items mixed into the heuristic baseline; defaults to the
    /// unseen-target share of the validation split.
    pub unseen_fraction: Option<f64>,
}

impl Default for EngineSection {
    fn default() -> Self {
        let d = SpecGRConfig::default();
        Self {
            k: d.k,
            draft_size: d.draft_size,
            threshold: d.threshold,
            beam_width: d.beam_width,
            mode: DraftMode::Auxiliary,
            guided: d.guided,
            unseen_fraction: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub t_valid: i64,
    pub t_test: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cutoffs: Vec<usize>,
    pub methods: Vec<String>,
    /// Also time every request (sequentially) and write a separate timing file.
    pub measure_latency: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            cutoffs: vec![10, 50],
            methods: vec!["specgr".into(), "beam_only".into(), "heuristic_mix".into()],
            measure_latency: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub gammas: Vec<f64>,
    pub deltas: Vec<usize>,
    pub betas: Vec<usize>,
    /// Validation cases used per sweep setting.
    pub cases: usize,
    pub subset_sizes: Vec<usize>,
    pub warmup: usize,
    pub repetitions: usize,
    pub batch_size: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            gammas: vec![-1.4, -1.5, -1.6, -1.7, -1.8],
            deltas: vec![10, 25, 50, 100],
            betas: vec![10, 25, 50, 100],
            cases: 500,
            subset_sizes: vec![10, 100, 1000],
            warmup: 5,
            repetitions: 30,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub tokenizer: TokenizerSection,
    pub scorer: ScorerSection,
    pub engine: EngineSection,
    pub split: SplitSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub synth: SyntheticConfig,
}

/// A loaded config together with the directory its relative paths hang off.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (table, base)
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        Ok(Self { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn artifacts(&self) -> PathBuf {
        self.resolve(&self.config.paths.artifacts)
    }

    pub fn interactions(&self) -> PathBuf {
        self.resolve(&self.config.paths.interactions)
    }

    pub fn embeddings(&self) -> (PathBuf, PathBuf) {
        let data = self.resolve(&self.config.paths.embeddings);
        let header = match &self.config.paths.embeddings_header {
            Some(h) => self.resolve(h),
            None => data.with_extension("json"),
        };
        (data, header)
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override {spec:?} is not KEY=VALUE")))?;
    // typed TOML literal if it parses, plain string otherwise
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("override {key:?}: {p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn layout(&self) -> TokenLayout {
        TokenLayout::new(
            self.tokenizer.digits,
            self.tokenizer.codebook_size,
            self.tokenizer.id_vocab,
        )
    }

    pub fn ngram(&self) -> NGramConfig {
        let d = NGramConfig::for_layout(&self.layout());
        NGramConfig {
            order: self.scorer.order.unwrap_or(d.order),
            smoothing: self.scorer.smoothing,
            embedding_dim: self.scorer.embedding_dim,
        }
    }

    pub fn spec_config(&self, k: usize) -> SpecGRConfig {
        SpecGRConfig {
            k,
            draft_size: self.engine.draft_size,
            threshold: self.engine.threshold,
            beam_width: self.engine.beam_width,
            subset: None,
            max_iterations: None,
            guided: self.engine.guided,
        }
    }

    /// Hash of everything the given stage's artifacts depend on.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut v = serde_json::json!({
            "seed": self.seed,
            "interactions": self.paths.interactions,
            "embeddings": self.paths.embeddings,
            "tokenizer": self.tokenizer,
            "split": self.split,
        });
        if stage >= Stage::Fit {
            v["scorer"] = serde_json::to_value(&self.scorer).expect("serializable");
        }
        if stage >= Stage::Index {
            v["mode"] = serde_json::to_value(self.engine.mode).expect("serializable");
        }
        sha256_hex(&serde_json::to_vec(&v).expect("serializable"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Tokenize,
    Fit,
    Index,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Tokenize => "tokenize",
            Stage::Fit => "fit",
            Stage::Index => "index",
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
